#pragma once

#include <stdexcept>
#include <string>

namespace ccmeta {

// Argument outside the mathematical domain of an operation.
class DomainError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// A series, quadrature or iteration did not reach its tolerance within budget.
class EvaluationError : public std::runtime_error {
 public:
  EvaluationError(const std::string& what, double achieved_bound)
      : std::runtime_error(what), achieved_bound_(achieved_bound) {}

  double achieved_bound() const noexcept { return achieved_bound_; }

 private:
  double achieved_bound_;
};

// The sampled realization is unusable (e.g. no base stations drawn).
class SamplingError : public std::runtime_error {
 public:
  SamplingError(const std::string& what, unsigned long long seed)
      : std::runtime_error(what), seed_(seed) {}

  unsigned long long seed() const noexcept { return seed_; }

 private:
  unsigned long long seed_;
};

// Queue-coupled run aborted because the total backlog outgrew its budget.
class QueueOverflowError : public std::runtime_error {
 public:
  QueueOverflowError(const std::string& what, long slot, long backlog)
      : std::runtime_error(what), slot_(slot), backlog_(backlog) {}

  long slot() const noexcept { return slot_; }
  long backlog() const noexcept { return backlog_; }

 private:
  long slot_;
  long backlog_;
};

// An output file could not be written.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void require(bool ok, const std::string& message) {
  if (!ok) throw DomainError(message);
}

}  // namespace detail
}  // namespace ccmeta
