// Copyright (C) 2026 The zoomrefine Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace zoomrefine {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Violated precondition on a caller-supplied argument.
class InvalidArgument : public Error { using Error::Error; };

// imaging
class FileNotFound : public Error { using Error::Error; };
class DecodeError : public Error { using Error::Error; };
class EncodeError : public Error { using Error::Error; };
class RectOutOfBounds : public Error { using Error::Error; };

// protocol
class TemplateError : public Error { using Error::Error; };

// backend
class BackendError : public Error { using Error::Error; };
class AuthError : public BackendError { using BackendError::BackendError; };
class BackendUnavailable : public BackendError { using BackendError::BackendError; };
class MalformedResponse : public BackendError { using BackendError::BackendError; };
/// Non-retryable 4xx other than 401/403.
class RequestRejected : public BackendError { using BackendError::BackendError; };
class ScriptError : public BackendError { using BackendError::BackendError; };

// bench
class SchemaError : public Error { using Error::Error; };
class MissingImage : public Error { using Error::Error; };
class UnmatchedTrace : public Error { using Error::Error; };
class SchemaMismatch : public Error { using Error::Error; };

// mockworld
class ParamError : public Error { using Error::Error; };
class UnknownScene : public BackendError { using BackendError::BackendError; };

// cli
class ConfigError : public Error { using Error::Error; };

}  // namespace zoomrefine
