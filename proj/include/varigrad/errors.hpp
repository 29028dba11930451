#pragma once

#include <stdexcept>
#include <string>

namespace varigrad {

/// Base class of every error thrown by this library.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct EmptyShapeError : Error { using Error::Error; };
struct IndexOutOfRangeError : Error { using Error::Error; };
struct DuplicateEdgeError : Error { using Error::Error; };
struct DegenerateEdgeError : Error { using Error::Error; };
struct TooFewPointsError : Error { using Error::Error; };
struct ParseError : Error { using Error::Error; };
struct DimensionError : Error { using Error::Error; };
struct ConfigError : Error { using Error::Error; };
struct EmptyDatasetError : Error { using Error::Error; };
struct SingleClassError : Error { using Error::Error; };

}  // namespace varigrad
