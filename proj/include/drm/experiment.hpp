#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "drm/energy.hpp"
#include "drm/netcore.hpp"
#include "drm/pgd.hpp"
#include "json.hpp"

namespace drm {

/// Everything one solve run needs, validated up front.
struct ExperimentConfig {
    nlohmann::json raw;
    EllipticProblem problem;
    NetShape shape;
    PGDConfig pgd;
    std::size_t n_interior = 0;
    std::size_t n_boundary = 0;
    std::uint64_t seed = 0;
    std::uint64_t sample_seed = 0;
    std::string output_dir = "drm_out";
    // matching parameters used by diagnose
    std::size_t match_R = 1;
    double match_delta = 0.0;
};

/// Layout:
///   {"seed", "output", "problem": {...}, "net": {m, W, L},
///    "pgd": {B, eta, zeta, lambda, T, log_every, track_h1, seed?},
///    "samples": {N_in, N_b?, N_s?, seed?},
///    "quadrature": {kind: "gauss", order} | {kind: "monte_carlo", count, seed},
///    "diagnose": {R, delta}}
/// pgd.seed defaults to seed, samples.seed to seed + 1. Throws InputError with a JSON pointer.
ExperimentConfig experiment_from_json(const nlohmann::json& doc);

QuadratureSpec quadrature_from_json(const nlohmann::json& doc, const std::string& path);

/// 1-based line of the value (or key) a JSON pointer names inside `text`; the
/// longest existing prefix is used, 0 when nothing matches.
std::size_t pointer_line(std::string_view text, std::string_view pointer);
/// 1-based line of a byte offset.
std::size_t offset_line(std::string_view text, std::size_t offset);

/// FNV-1a 64 of the compact dump (keys are sorted, so equal documents hash alike).
std::uint64_t fnv1a64(std::string_view bytes);
std::string config_hash(const nlohmann::json& doc);
/// Appends "# config_hash=<hex>" as the last line.
std::string with_hash_footer(std::string csv, const std::string& hash);

/// Network, the iterate's bookkeeping (iteration, initial inner weights) and the config echo.
nlohmann::json checkpoint_to_json(const TrainState& state, const nlohmann::json& config);
TrainState checkpoint_from_json(const nlohmann::json& doc);

}  // namespace drm
