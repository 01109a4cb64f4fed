#include "drm/experiment.hpp"

#include <cinttypes>
#include <cstdio>
#include <map>

#include "drm/errors.hpp"

namespace drm {

namespace {

using nlohmann::json;

const json& object_at(const json& doc, const char* key, const std::string& path) {
    static const json empty = json::object();
    if (!doc.contains(key)) return empty;
    const json& v = doc.at(key);
    if (!v.is_object()) throw InputError(std::string("'") + key + "' must be an object", path + "/" + key);
    return v;
}

std::size_t count_field(const json& obj, const char* key, const std::string& path, std::size_t fallback,
                        std::size_t minimum = 1) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < static_cast<long long>(minimum))
        throw InputError(std::string("'") + key + "' must be an integer >= " + std::to_string(minimum),
                         path + "/" + key);
    return v.get<std::size_t>();
}

double real_field(const json& obj, const char* key, const std::string& path, double fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number()) throw InputError(std::string("'") + key + "' must be a number", path + "/" + key);
    return v.get<double>();
}

std::uint64_t seed_field(const json& obj, const char* key, const std::string& path, std::uint64_t fallback) {
    if (!obj.contains(key)) return fallback;
    const json& v = obj.at(key);
    if (!v.is_number_integer() || v.get<long long>() < 0)
        throw InputError(std::string("'") + key + "' must be a non-negative integer", path + "/" + key);
    return v.get<std::uint64_t>();
}

// Rethrows a pointer-less InputError under `pointer`.
template <class F>
auto anchored(const std::string& pointer, F&& f) {
    try {
        return f();
    } catch (const InputError& e) {
        if (!e.pointer().empty()) throw;
        throw InputError(e.what(), pointer);
    }
}

// Minimal scanner over already-valid JSON text recording the line of every pointer.
class LineIndex {
public:
    explicit LineIndex(std::string_view text) : s_(text) {
        lines_[""] = 1;
        value("");
    }
    const std::map<std::string, std::size_t>& lines() const { return lines_; }

private:
    std::string_view s_;
    std::size_t pos_ = 0;
    std::size_t line_ = 1;
    std::map<std::string, std::size_t> lines_;

    void ws() {
        while (pos_ < s_.size() && (s_[pos_] == ' ' || s_[pos_] == '\t' || s_[pos_] == '\n' || s_[pos_] == '\r')) {
            if (s_[pos_] == '\n') ++line_;
            ++pos_;
        }
    }
    std::string string() {
        std::string out;
        ++pos_;  // opening quote
        while (pos_ < s_.size() && s_[pos_] != '"') {
            if (s_[pos_] == '\\' && pos_ + 1 < s_.size()) {
                out += s_[pos_ + 1];  // good enough for key matching
                pos_ += 2;
                continue;
            }
            out += s_[pos_++];
        }
        ++pos_;
        return out;
    }
    static std::string escape(const std::string& key) {
        std::string out;
        for (char c : key) {
            if (c == '~') out += "~0";
            else if (c == '/') out += "~1";
            else out += c;
        }
        return out;
    }
    void value(const std::string& path) {
        ws();
        if (pos_ >= s_.size()) return;
        const char c = s_[pos_];
        if (c == '{') {
            ++pos_;
            for (;;) {
                ws();
                if (pos_ >= s_.size() || s_[pos_] == '}') break;
                if (s_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                const std::size_t key_line = line_;
                const std::string child = path + "/" + escape(string());
                lines_[child] = key_line;
                ws();
                if (pos_ < s_.size() && s_[pos_] == ':') ++pos_;
                value(child);
            }
            ++pos_;
        } else if (c == '[') {
            ++pos_;
            std::size_t index = 0;
            for (;;) {
                ws();
                if (pos_ >= s_.size() || s_[pos_] == ']') break;
                if (s_[pos_] == ',') {
                    ++pos_;
                    continue;
                }
                const std::string child = path + "/" + std::to_string(index++);
                lines_[child] = line_;
                value(child);
            }
            ++pos_;
        } else if (c == '"') {
            string();
        } else {
            while (pos_ < s_.size() && s_[pos_] != ',' && s_[pos_] != '}' && s_[pos_] != ']' && s_[pos_] != ' ' &&
                   s_[pos_] != '\n' && s_[pos_] != '\r' && s_[pos_] != '\t')
                ++pos_;
        }
    }
};

}  // namespace

QuadratureSpec quadrature_from_json(const json& doc, const std::string& path) {
    if (!doc.is_object()) throw InputError("quadrature must be an object", path);
    const std::string kind = doc.value("kind", std::string("gauss"));
    if (kind == "gauss") return QuadratureSpec::gauss(count_field(doc, "order", path, 32));
    if (kind == "monte_carlo")
        return QuadratureSpec::monte_carlo(count_field(doc, "count", path, std::size_t{1} << 18),
                                           seed_field(doc, "seed", path, 0x5eed));
    throw InputError("quadrature kind must be 'gauss' or 'monte_carlo'", path + "/kind");
}

ExperimentConfig experiment_from_json(const json& doc) {
    if (!doc.is_object()) throw InputError("config must be a JSON object", "");
    ExperimentConfig cfg;
    cfg.raw = doc;
    cfg.seed = seed_field(doc, "seed", "", 0);
    if (doc.contains("output")) {
        if (!doc.at("output").is_string()) throw InputError("'output' must be a string", "/output");
        cfg.output_dir = doc.at("output").get<std::string>();
    }
    if (!doc.contains("problem")) throw InputError("config needs a 'problem'", "/problem");
    cfg.problem = problem_from_json(doc.at("problem"), "/problem");
    const std::size_t d = cfg.problem.dim();

    const json& net = object_at(doc, "net", "");
    cfg.shape.m = count_field(net, "m", "/net", 64);
    cfg.shape.width = count_field(net, "W", "/net", 4);
    cfg.shape.depth = count_field(net, "L", "/net", 3);
    cfg.shape.input_dim = d;
    if (net.contains("d") && net.at("d") != d) throw InputError("net 'd' differs from the problem dimension", "/net/d");

    const json& pgd = object_at(doc, "pgd", "");
    cfg.pgd.B = real_field(pgd, "B", "/pgd", cfg.pgd.B);
    cfg.pgd.eta = real_field(pgd, "eta", "/pgd", cfg.pgd.eta);
    cfg.pgd.zeta = real_field(pgd, "zeta", "/pgd", cfg.pgd.zeta);
    cfg.pgd.lambda = real_field(pgd, "lambda", "/pgd", cfg.pgd.lambda);
    cfg.pgd.T = count_field(pgd, "T", "/pgd", cfg.pgd.T, 0);
    cfg.pgd.log_every = count_field(pgd, "log_every", "/pgd", 0, 0);
    cfg.pgd.seed = seed_field(pgd, "seed", "/pgd", cfg.seed);
    if (pgd.contains("track_h1")) {
        if (!pgd.at("track_h1").is_boolean()) throw InputError("'track_h1' must be a boolean", "/pgd/track_h1");
        cfg.pgd.track_h1 = pgd.at("track_h1").get<bool>();
    } else {
        cfg.pgd.track_h1 = cfg.problem.exact.has_value();
    }
    if (cfg.pgd.track_h1 && !cfg.problem.exact)
        throw InputError("track_h1 needs an exact solution u0", "/pgd/track_h1");
    cfg.pgd.quad = doc.contains("quadrature") ? quadrature_from_json(doc.at("quadrature"), "/quadrature")
                                              : QuadratureSpec::default_for(d);
    cfg.pgd.validate();

    const json& samples = object_at(doc, "samples", "");
    const std::size_t both = count_field(samples, "N_s", "/samples", 1024);
    cfg.n_interior = count_field(samples, "N_in", "/samples", both);
    cfg.n_boundary = count_field(samples, "N_b", "/samples", both);
    cfg.sample_seed = seed_field(samples, "seed", "/samples", cfg.seed + 1);

    const json& diag = object_at(doc, "diagnose", "");
    cfg.match_R = count_field(diag, "R", "/diagnose", 1);
    cfg.match_delta = real_field(diag, "delta", "/diagnose", cfg.pgd.B);
    if (!(cfg.match_delta >= 0.0)) throw InputError("'delta' must be non-negative", "/diagnose/delta");

    anchored("/net", [&] { return initialize(cfg.shape, cfg.pgd.B, 0).iteration; });
    return cfg;
}

std::size_t pointer_line(std::string_view text, std::string_view pointer) {
    const LineIndex index(text);
    std::string p(pointer);
    for (;;) {
        const auto it = index.lines().find(p);
        if (it != index.lines().end()) return it->second;
        const auto cut = p.rfind('/');
        if (cut == std::string::npos) return 0;
        p.resize(cut);
    }
}

std::size_t offset_line(std::string_view text, std::size_t offset) {
    std::size_t line = 1;
    for (std::size_t i = 0; i < offset && i < text.size(); ++i)
        if (text[i] == '\n') ++line;
    return line;
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string config_hash(const json& doc) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016" PRIx64, fnv1a64(doc.dump()));
    return buf;
}

std::string with_hash_footer(std::string csv, const std::string& hash) {
    if (!csv.empty() && csv.back() != '\n') csv += '\n';
    csv += "# config_hash=" + hash + "\n";
    return csv;
}

json checkpoint_to_json(const TrainState& state, const json& config) {
    return {{"network", network_to_json(state.network())},
            {"snapshot", {{"iteration", state.iteration}, {"init_inner", state.init_inner}}},
            {"config", config}};
}

TrainState checkpoint_from_json(const json& doc) {
    if (!doc.is_object() || !doc.contains("network")) throw InputError("checkpoint needs a 'network'", "/network");
    const ParallelNetwork net = anchored("/network", [&] { return network_from_json(doc.at("network")); });
    TrainState st;
    st.shape = net.shape();
    st.params = flatten(net);
    st.init_inner = st.params.inner;
    if (doc.contains("snapshot")) {
        const json& snap = doc.at("snapshot");
        if (snap.contains("iteration")) st.iteration = snap.at("iteration").get<std::size_t>();
        if (snap.contains("init_inner")) {
            st.init_inner = snap.at("init_inner").get<Vec>();
            if (st.init_inner.size() != st.params.inner.size())
                throw InputError("init_inner length differs from the network", "/snapshot/init_inner");
        }
    }
    return st;
}

}  // namespace drm
