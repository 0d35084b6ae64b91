#pragma once

#include <stdexcept>
#include <string>

namespace dcnid {

// Base of all library errors. Callers that only care about "identification
// failed" catch this; the subclasses carry the specific failure mode.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionMismatch : public Error {
 public:
  using Error::Error;
};

class RemainderTooLarge : public Error {
 public:
  using Error::Error;
};

class InvalidNetwork : public Error {
 public:
  using Error::Error;
};

class InvalidConfig : public Error {
 public:
  using Error::Error;
};

class SingularFrequency : public Error {
 public:
  using Error::Error;
};

class EmptyBand : public Error {
 public:
  using Error::Error;
};

class WindowOutOfGrid : public Error {
 public:
  using Error::Error;
};

class RankDeficientWindow : public Error {
 public:
  using Error::Error;
};

class SingularWeight : public Error {
 public:
  using Error::Error;
};

class SingularKKT : public Error {
 public:
  using Error::Error;
};

class InvalidConstraints : public Error {
 public:
  using Error::Error;
};

class SingularImmersionBlock : public Error {
 public:
  using Error::Error;
};

class InvalidPartition : public Error {
 public:
  using Error::Error;
};

}  // namespace dcnid
