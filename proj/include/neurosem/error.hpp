#pragma once

#include <stdexcept>
#include <string>

namespace neurosem {

// Error taxonomy shared by every module. The CLI maps categories to exit
// codes (config 2, data 3, runtime 4, transport 5).
enum class ErrorKind {
  Dimension,
  Schema,
  Coverage,
  Lookup,
  Config,
  Data,
  Contract,
  Transport,
  Layout,
  File,
  Numeric,
};

inline const char* to_string(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + " error: " + what), kind_(kind) {}

  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define NEUROSEM_DEFINE_ERROR(Name, Kind) \
  class Name : public Error {             \
   public:                                \
    explicit Name(const std::string& what) : Error(ErrorKind::Kind, what) {} \
  };

NEUROSEM_DEFINE_ERROR(DimensionError, Dimension)
NEUROSEM_DEFINE_ERROR(SchemaError, Schema)
NEUROSEM_DEFINE_ERROR(CoverageError, Coverage)
NEUROSEM_DEFINE_ERROR(LookupError, Lookup)
NEUROSEM_DEFINE_ERROR(ConfigError, Config)
NEUROSEM_DEFINE_ERROR(DataError, Data)
NEUROSEM_DEFINE_ERROR(ContractError, Contract)
NEUROSEM_DEFINE_ERROR(TransportError, Transport)
NEUROSEM_DEFINE_ERROR(LayoutError, Layout)
NEUROSEM_DEFINE_ERROR(FileError, File)
NEUROSEM_DEFINE_ERROR(NumericError, Numeric)

#undef NEUROSEM_DEFINE_ERROR

inline const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::Dimension: return "dimension";
    case ErrorKind::Schema: return "schema";
    case ErrorKind::Coverage: return "coverage";
    case ErrorKind::Lookup: return "lookup";
    case ErrorKind::Config: return "config";
    case ErrorKind::Data: return "data";
    case ErrorKind::Contract: return "contract";
    case ErrorKind::Transport: return "transport";
    case ErrorKind::Layout: return "layout";
    case ErrorKind::File: return "file";
    case ErrorKind::Numeric: return "numeric";
  }
  return "unknown";
}

}  // namespace neurosem
