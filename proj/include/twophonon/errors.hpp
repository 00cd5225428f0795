#pragma once

#include <stdexcept>
#include <string>

namespace twophonon {

// All library failures derive from Error so callers (the CLI in particular)
// can map categories onto exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class InvalidDimension : public Error {
public:
    using Error::Error;
};

class InvalidParameter : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class InvalidState : public Error {
public:
    using Error::Error;
};

class PoleError : public Error {
public:
    using Error::Error;
};

class IntegrationError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& what)
        : Error(what), key_(std::move(key)) {}
    const std::string& key() const noexcept { return key_; }

private:
    std::string key_;
};

} // namespace twophonon
