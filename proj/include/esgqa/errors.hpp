#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace esgqa {

/// Root of every error raised by the toolkit.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A caller broke a documented precondition.
class PreconditionError : public Error {
public:
    using Error::Error;
};

// Provider layer
class ProviderError : public Error {
public:
    using Error::Error;
};
class TransportError : public ProviderError {
public:
    using ProviderError::ProviderError;
};
class RateLimited : public ProviderError {
public:
    using ProviderError::ProviderError;
};
class SchemaViolation : public ProviderError {
public:
    using ProviderError::ProviderError;
};
class NonNumericJudgment : public SchemaViolation {
public:
    using SchemaViolation::SchemaViolation;
};
class CacheMiss : public ProviderError {
public:
    using ProviderError::ProviderError;
};

class DimensionMismatch : public Error {
public:
    using Error::Error;
};

// Ingestion and chunking
class NonContiguousPages : public Error {
public:
    using Error::Error;
};
class EmptyDocument : public Error {
public:
    using Error::Error;
};
class MissingPageSpans : public Error {
public:
    using Error::Error;
};

// Retrieval
class EmptyIndex : public Error {
public:
    using Error::Error;
};

// QA dataset
class UnknownIndustryId : public Error {
public:
    using Error::Error;
};
class EmptyReferenceSet : public Error {
public:
    using Error::Error;
};
class MissingComponent : public Error {
public:
    using Error::Error;
};
class RewriteScopeViolation : public Error {
public:
    using Error::Error;
};
class LengthMismatch : public Error {
public:
    using Error::Error;
};
class AllSnippetsRejected : public Error {
public:
    using Error::Error;
};
/// The model returned fewer items than requested, even after a retry for
/// the remainder. `partial` holds what was returned (serialized).
class UnderGeneration : public ProviderError {
public:
    UnderGeneration(const std::string& what, std::size_t requested, std::vector<std::string> partial)
        : ProviderError(what), requested_(requested), partial_(std::move(partial))
    {
    }
    std::size_t requested() const { return requested_; }
    std::size_t returned() const { return partial_.size(); }
    const std::vector<std::string>& partial() const { return partial_; }

private:
    std::size_t requested_;
    std::vector<std::string> partial_;
};

} // namespace esgqa
