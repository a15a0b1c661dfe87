#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace slat {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeMismatch : public Error {
 public:
  ShapeMismatch(const std::string& op, const std::string& expected, const std::string& got)
      : Error(op + ": shape mismatch, expected " + expected + ", got " + got) {}
};

class LabelOutOfRange : public Error {
 public:
  LabelOutOfRange(long label, std::size_t classes)
      : Error("label " + std::to_string(label) + " out of range for " + std::to_string(classes) +
              " classes") {}
};

class NonScalarLoss : public Error {
 public:
  explicit NonScalarLoss(std::size_t size)
      : Error("backward: loss node has " + std::to_string(size) + " elements, expected 1") {}
};

class UnknownSite : public Error {
 public:
  explicit UnknownSite(int site) : Error("unknown injection site " + std::to_string(site)) {}
};

class UnsupportedOps : public Error {
 public:
  using Error::Error;
};

/// A forward value came out NaN or infinite.
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

class NonFiniteGradient : public Error {
 public:
  explicit NonFiniteGradient(long step)
      : Error("non-finite gradient at step " + std::to_string(step)), step_(step) {}
  long step() const noexcept { return step_; }

 private:
  long step_;
};

class ShapeTooSmall : public Error {
 public:
  using Error::Error;
};

class DegenerateBoundary : public Error {
 public:
  using Error::Error;
};

/// IDX ingestion failures.
class IdxError : public Error {
 public:
  enum class Kind { BadMagic, TruncatedFile, CountMismatch, Io };
  IdxError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

class CheckpointError : public Error {
 public:
  using Error::Error;
};

}  // namespace slat
