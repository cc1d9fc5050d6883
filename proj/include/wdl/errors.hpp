#pragma once

#include <stdexcept>
#include <string>

namespace wdl {

/// Malformed inputs: wrong shapes, negative masses, bad files.
class validation_error : public std::runtime_error {
public:
  explicit validation_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Out-of-range hyperparameters (gamma <= 0, tau > 0, ...).
class parameter_error : public std::runtime_error {
public:
  explicit parameter_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// A function was evaluated outside its mathematical domain (e.g. log of a
/// zero bin); the message says how to avoid it.
class domain_error : public std::runtime_error {
public:
  explicit domain_error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values appeared inside an iterative scaling loop.
class instability_error : public std::runtime_error {
public:
  instability_error(const std::string& msg, int iteration)
      : std::runtime_error(msg), iteration_(iteration) {}
  int iteration() const { return iteration_; }

private:
  int iteration_;
};

}  // namespace wdl
