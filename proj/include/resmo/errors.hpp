#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace resmo {

/// Base of every error raised by the library. `name()` is the short error
/// kind printed by the command-line front end.
class Error : public std::runtime_error
{
public:
    using std::runtime_error::runtime_error;
    virtual const char* name() const noexcept { return "Error"; }
};

#define RESMO_DEFINE_ERROR(Type, Base)                                  \
    class Type : public Base                                            \
    {                                                                   \
    public:                                                             \
        using Base::Base;                                               \
        const char* name() const noexcept override { return #Type; }    \
    }

RESMO_DEFINE_ERROR(DimensionError, Error);
RESMO_DEFINE_ERROR(ConfigError, Error);
RESMO_DEFINE_ERROR(IndexError, Error);
RESMO_DEFINE_ERROR(StateError, Error);
RESMO_DEFINE_ERROR(GraphError, Error);
RESMO_DEFINE_ERROR(ValidationError, Error);
RESMO_DEFINE_ERROR(ArgumentError, Error);
RESMO_DEFINE_ERROR(RangeError, Error);
RESMO_DEFINE_ERROR(IoError, Error);
RESMO_DEFINE_ERROR(DivergenceError, Error);
RESMO_DEFINE_ERROR(MeasurementError, Error);
RESMO_DEFINE_ERROR(NotFoundError, Error);
RESMO_DEFINE_ERROR(ConflictError, Error);
RESMO_DEFINE_ERROR(AuthError, Error);

// weight file loading
RESMO_DEFINE_ERROR(LoadError, Error);
RESMO_DEFINE_ERROR(BadMagicError, LoadError);
RESMO_DEFINE_ERROR(VersionError, LoadError);
RESMO_DEFINE_ERROR(FormatError, LoadError);
RESMO_DEFINE_ERROR(TruncationError, LoadError);
RESMO_DEFINE_ERROR(ShapeMismatchError, LoadError);

#undef RESMO_DEFINE_ERROR

/// EFS/1 decoding failure; carries the 1-based line number.
class DecodeError : public Error
{
public:
    DecodeError(std::size_t line, const std::string& what)
        : Error("line " + std::to_string(line) + ": " + what), line_(line)
    {
    }
    const char* name() const noexcept override { return "DecodeError"; }
    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

} // namespace resmo
