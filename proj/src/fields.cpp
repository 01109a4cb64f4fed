#include "drm/fields.hpp"

#include <cmath>
#include <numbers>

#include "drm/errors.hpp"

namespace drm {

Factor Factor::power(unsigned p) {
    std::vector<double> c(p + 1, 0.0);
    c[p] = 1.0;
    return polynomial(std::move(c));
}

double Factor::derivative(double x, unsigned k) const {
    switch (kind) {
        case Kind::Cosine: {
            // cos shifted by a quarter turn per derivative
            const double scale = std::pow(rate, static_cast<double>(k));
            switch (k % 4) {
                case 0: return scale * std::cos(rate * x + phase);
                case 1: return -scale * std::sin(rate * x + phase);
                case 2: return -scale * std::cos(rate * x + phase);
                default: return scale * std::sin(rate * x + phase);
            }
        }
        case Kind::Exponential:
            return std::pow(rate, static_cast<double>(k)) * std::exp(rate * x);
        case Kind::Polynomial: {
            double acc = 0.0;
            for (std::size_t i = poly.size(); i-- > k;) {
                double falling = 1.0;
                for (unsigned j = 0; j < k; ++j) falling *= static_cast<double>(i - j);
                acc = acc * x + falling * poly[i];
            }
            return acc;
        }
    }
    return 0.0;
}

AnalyticField::AnalyticField(std::size_t dim, std::vector<SeparableTerm> terms) : dim_(dim), terms_(std::move(terms)) {
    if (dim_ == 0) throw InputError("field dimension must be positive");
    for (auto& t : terms_) {
        if (t.factors.size() > dim_) throw InputError("separable term has more factors than dimensions");
        t.factors.resize(dim_, Factor::one());
        if (!std::isfinite(t.coefficient)) throw InputError("non-finite field coefficient");
    }
}

AnalyticField AnalyticField::constant(std::size_t dim, double value) {
    if (value == 0.0) return AnalyticField(dim, {});
    return AnalyticField(dim, {SeparableTerm{value, {}}});
}

AnalyticField AnalyticField::cosine_product(std::size_t dim, double amplitude, double frequency) {
    SeparableTerm t{amplitude, std::vector<Factor>(dim, Factor::cosine(frequency * std::numbers::pi))};
    return AnalyticField(dim, {t});
}

AnalyticField AnalyticField::polynomial(std::size_t dim, const std::vector<Monomial>& monomials) {
    std::vector<SeparableTerm> terms;
    for (const auto& mono : monomials) {
        if (mono.powers.size() > dim) throw InputError("monomial has more powers than dimensions");
        SeparableTerm t{mono.coefficient, {}};
        for (unsigned p : mono.powers) t.factors.push_back(Factor::power(p));
        terms.push_back(std::move(t));
    }
    return AnalyticField(dim, std::move(terms));
}

namespace {

double num(const nlohmann::json& obj, const char* key, const std::string& path, double fallback) {
    if (!obj.contains(key)) return fallback;
    const auto& v = obj.at(key);
    if (!v.is_number()) throw InputError(std::string("'") + key + "' must be a number", path + "/" + key);
    return v.get<double>();
}

Factor factor_from_json(const nlohmann::json& f, const std::string& path) {
    if (!f.is_object() || !f.contains("kind") || !f.at("kind").is_string())
        throw InputError("factor needs a string 'kind'", path);
    const auto kind = f.at("kind").get<std::string>();
    if (kind == "cosine") return Factor::cosine(num(f, "rate", path, 1.0), num(f, "phase", path, 0.0));
    if (kind == "exponential") return Factor::exponential(num(f, "rate", path, 1.0));
    if (kind == "polynomial") {
        if (!f.contains("coefficients") || !f.at("coefficients").is_array())
            throw InputError("polynomial factor needs 'coefficients'", path + "/coefficients");
        std::vector<double> c;
        for (const auto& v : f.at("coefficients")) {
            if (!v.is_number()) throw InputError("polynomial coefficients must be numbers", path + "/coefficients");
            c.push_back(v.get<double>());
        }
        return Factor::polynomial(std::move(c));
    }
    throw InputError("unknown factor kind '" + kind + "'", path + "/kind");
}

}  // namespace

AnalyticField AnalyticField::from_json(const nlohmann::json& spec, std::size_t dim, const std::string& path) {
    if (spec.is_number()) return constant(dim, spec.get<double>());
    if (!spec.is_object() || !spec.contains("kind") || !spec.at("kind").is_string())
        throw InputError("field needs a string 'kind'", path + "/kind");
    const auto kind = spec.at("kind").get<std::string>();
    const nlohmann::json params = spec.value("params", nlohmann::json::object());
    const std::string pp = path + "/params";
    if (!params.is_object()) throw InputError("'params' must be an object", pp);
    if (kind == "constant") return constant(dim, num(params, "value", pp, 0.0));
    if (kind == "cosine_product")
        return cosine_product(dim, num(params, "amplitude", pp, 1.0), num(params, "frequency", pp, 1.0));
    if (kind == "polynomial") {
        if (!params.contains("terms") || !params.at("terms").is_array())
            throw InputError("polynomial field needs 'terms'", pp + "/terms");
        std::vector<Monomial> monos;
        std::size_t i = 0;
        for (const auto& t : params.at("terms")) {
            const std::string tp = pp + "/terms/" + std::to_string(i++);
            Monomial m{num(t, "coefficient", tp, 1.0), {}};
            if (t.contains("powers")) {
                if (!t.at("powers").is_array()) throw InputError("'powers' must be an array", tp + "/powers");
                for (const auto& p : t.at("powers")) {
                    if (!p.is_number_unsigned()) throw InputError("powers must be non-negative integers", tp + "/powers");
                    m.powers.push_back(p.get<unsigned>());
                }
            }
            if (m.powers.size() > dim) throw InputError("more powers than dimensions", tp + "/powers");
            monos.push_back(std::move(m));
        }
        return polynomial(dim, monos);
    }
    if (kind == "separable") {
        if (!params.contains("terms") || !params.at("terms").is_array())
            throw InputError("separable field needs 'terms'", pp + "/terms");
        std::vector<SeparableTerm> terms;
        std::size_t i = 0;
        for (const auto& t : params.at("terms")) {
            const std::string tp = pp + "/terms/" + std::to_string(i++);
            SeparableTerm term{num(t, "coefficient", tp, 1.0), {}};
            if (t.contains("factors")) {
                std::size_t j = 0;
                for (const auto& f : t.at("factors")) term.factors.push_back(factor_from_json(f, tp + "/factors/" + std::to_string(j++)));
            }
            if (term.factors.size() > dim) throw InputError("more factors than dimensions", tp + "/factors");
            terms.push_back(std::move(term));
        }
        return AnalyticField(dim, std::move(terms));
    }
    throw InputError("unknown field kind '" + kind + "'", path + "/kind");
}

double AnalyticField::value(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : terms_) {
        double p = t.coefficient;
        for (std::size_t i = 0; i < dim_; ++i) p *= t.factors[i].derivative(x[i], 0);
        s += p;
    }
    return s;
}

void AnalyticField::gradient(std::span<const double> x, std::span<double> out) const {
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& t : terms_) {
        for (std::size_t i = 0; i < dim_; ++i) {
            double p = t.coefficient;
            for (std::size_t j = 0; j < dim_; ++j) p *= t.factors[j].derivative(x[j], i == j ? 1 : 0);
            out[i] += p;
        }
    }
}

double AnalyticField::laplacian(std::span<const double> x) const {
    double s = 0.0;
    for (const auto& t : terms_) {
        for (std::size_t i = 0; i < dim_; ++i) {
            double p = t.coefficient;
            for (std::size_t j = 0; j < dim_; ++j) p *= t.factors[j].derivative(x[j], i == j ? 2 : 0);
            s += p;
        }
    }
    return s;
}

double AnalyticField::derivative(std::span<const double> x, std::span<const unsigned> alpha) const {
    double s = 0.0;
    for (const auto& t : terms_) {
        double p = t.coefficient;
        for (std::size_t j = 0; j < dim_; ++j) p *= t.factors[j].derivative(x[j], alpha[j]);
        s += p;
    }
    return s;
}

AnalyticField AnalyticField::scaled(double factor) const {
    auto copy = *this;
    for (auto& t : copy.terms_) t.coefficient *= factor;
    return copy;
}

}  // namespace drm
