#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace drm {

/// Precondition or configuration violation detected before any numerics run.
/// `pointer` optionally names the offending JSON field ("/pgd/eta").
class InputError : public std::invalid_argument {
public:
    explicit InputError(const std::string& what, std::string pointer = {})
        : std::invalid_argument(what), pointer_(std::move(pointer)) {}
    const std::string& pointer() const noexcept { return pointer_; }

private:
    std::string pointer_;
};

/// A numeric quantity became non-finite mid-computation.
class NumericAbort : public std::runtime_error {
public:
    NumericAbort(const std::string& what, long long index = -1)
        : std::runtime_error(what), index_(index) {}
    long long index() const noexcept { return index_; }

private:
    long long index_;
};

/// A builder refused because the requested object exceeds the configured size cap.
class CapacityError : public std::runtime_error {
public:
    CapacityError(const std::string& what, double required)
        : std::runtime_error(what), required_(required) {}
    double required() const noexcept { return required_; }

private:
    double required_;
};

}  // namespace drm
