#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace drm {

/// One-dimensional smooth factor with closed-form derivatives of every order.
struct Factor {
    enum class Kind { Cosine, Polynomial, Exponential };

    Kind kind = Kind::Polynomial;
    double rate = 0.0;          // cos(rate*x + phase), exp(rate*x)
    double phase = 0.0;
    std::vector<double> poly{1.0};  // c0 + c1 x + ...

    static Factor one() { return {}; }
    static Factor cosine(double rate, double phase = 0.0) { return {Kind::Cosine, rate, phase, {}}; }
    static Factor polynomial(std::vector<double> coeffs) { return {Kind::Polynomial, 0.0, 0.0, std::move(coeffs)}; }
    static Factor exponential(double rate) { return {Kind::Exponential, rate, 0.0, {}}; }
    static Factor power(unsigned p);

    /// k-th derivative at x.
    double derivative(double x, unsigned k) const;
};

/// coefficient * prod_i factor_i(x_i).
struct SeparableTerm {
    double coefficient = 1.0;
    std::vector<Factor> factors;
};

/// Scalar field on R^d written as a finite sum of separable terms.
class AnalyticField {
public:
    AnalyticField() = default;
    AnalyticField(std::size_t dim, std::vector<SeparableTerm> terms);

    static AnalyticField constant(std::size_t dim, double value);
    /// amplitude * prod_i cos(frequency * pi * x_i).
    static AnalyticField cosine_product(std::size_t dim, double amplitude, double frequency);
    /// Sum of coefficient * x^powers.
    struct Monomial {
        double coefficient;
        std::vector<unsigned> powers;
    };
    static AnalyticField polynomial(std::size_t dim, const std::vector<Monomial>& monomials);
    /// {kind, params}; kinds: constant, cosine_product, polynomial, separable.
    static AnalyticField from_json(const nlohmann::json& spec, std::size_t dim, const std::string& path);

    std::size_t dim() const { return dim_; }
    const std::vector<SeparableTerm>& terms() const { return terms_; }
    bool is_zero() const { return terms_.empty(); }

    double value(std::span<const double> x) const;
    void gradient(std::span<const double> x, std::span<double> out) const;
    double laplacian(std::span<const double> x) const;
    /// Mixed partial derivative D^alpha.
    double derivative(std::span<const double> x, std::span<const unsigned> alpha) const;

    AnalyticField scaled(double factor) const;

private:
    std::size_t dim_ = 0;
    std::vector<SeparableTerm> terms_;
};

}  // namespace drm
