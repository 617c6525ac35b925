#pragma once

#include <stdexcept>
#include <string>

namespace cpbayes {

/// Shapes, ranks, or indices that do not line up.
class structural_error : public std::runtime_error {
  public:
    explicit structural_error(const std::string& what) : std::runtime_error(what) {}
};

/// Rejected input: bad hyperparameters, empty designs, violated gates.
class validation_error : public std::runtime_error {
  public:
    explicit validation_error(const std::string& what) : std::runtime_error(what) {}
};

/// Operation not defined for the requested argument combination.
class unsupported_error : public std::runtime_error {
  public:
    explicit unsupported_error(const std::string& what) : std::runtime_error(what) {}
};

/// Numerical breakdown that survived the retry policy.
class numerical_error : public std::runtime_error {
  public:
    explicit numerical_error(const std::string& what) : std::runtime_error(what) {}
};

/// A chain exhausted its budget without producing a usable estimate.
class estimation_error : public std::runtime_error {
  public:
    explicit estimation_error(const std::string& what) : std::runtime_error(what) {}
};

/// Missing or inconsistent configuration.
class config_error : public std::runtime_error {
  public:
    explicit config_error(const std::string& what) : std::runtime_error(what) {}
};

/// File parse or write failure.
class io_error : public std::runtime_error {
  public:
    explicit io_error(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace cpbayes
