#pragma once

#include <stdexcept>
#include <string>

namespace nestedg {

// Error classes map one-to-one onto CLI exit codes (see tools/nestedg.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
  virtual const char* class_name() const noexcept { return "Error"; }
};

/// Malformed input: unreadable files, bad CSV, bad config, invalid arguments.
class InputError : public Error {
 public:
  using Error::Error;
  const char* class_name() const noexcept override { return "InputError"; }
};

/// Any failure while fitting or simulating from a model.
class ModelError : public Error {
 public:
  using Error::Error;
  const char* class_name() const noexcept override { return "ModelError"; }
};

class SingularDesignError : public ModelError {
 public:
  using ModelError::ModelError;
  const char* class_name() const noexcept override { return "SingularDesignError"; }
};

class DomainError : public ModelError {
 public:
  using ModelError::ModelError;
  const char* class_name() const noexcept override { return "DomainError"; }
};

class InsufficientDataError : public ModelError {
 public:
  using ModelError::ModelError;
  const char* class_name() const noexcept override { return "InsufficientDataError"; }
};

class PositivityError : public ModelError {
 public:
  using ModelError::ModelError;
  const char* class_name() const noexcept override { return "PositivityError"; }
};

class UnimplementedError : public ModelError {
 public:
  using ModelError::ModelError;
  const char* class_name() const noexcept override { return "UnimplementedError"; }
};

class InferenceError : public Error {
 public:
  using Error::Error;
  const char* class_name() const noexcept override { return "InferenceError"; }
};

class StudyError : public Error {
 public:
  using Error::Error;
  const char* class_name() const noexcept override { return "StudyError"; }
};

}  // namespace nestedg
