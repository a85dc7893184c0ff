#pragma once

#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "verify.hpp"

namespace tridyson {

enum ExitCode : int { exit_ok = 0, exit_verification = 1, exit_parameter = 2, exit_numerical = 3 };

struct RunConfig {
    std::string command;
    std::string suite;  // verify
    int n = 0;
    double beta = 2.0;
    std::uint64_t seed = 1;
    double dt = 0.0;  // 0 selects 1e-3/n
    double t_end = 0.1;
    std::string model = "dbm";
    std::string route = "a";
    std::string potential = "quadratic";
    std::string rule = "calibrated";
    int corner_m = 0;  // 0 writes the full matrix; verify falls back to 4
    int trials = 0;
    int count = 1;
    int jobs = 1;
    int every = 0;  // 0 keeps about 1000 rows per trajectory
    double weight_drift = 0.5;
    std::string out = ".";
    std::string init;
    std::string replay_noise;
    bool log_noise = false;
};

inline json to_json(const RunConfig& c) {
    return {{"command", c.command}, {"suite", c.suite},       {"n", c.n},
            {"beta", c.beta},       {"seed", c.seed},         {"dt", c.dt},
            {"t_end", c.t_end},     {"model", c.model},       {"route", c.route},
            {"potential", c.potential}, {"rule", c.rule},     {"corner_m", c.corner_m},
            {"trials", c.trials},   {"count", c.count},       {"jobs", c.jobs},
            {"every", c.every},     {"weight_drift", c.weight_drift}, {"out", c.out},
            {"init", c.init},       {"replay_noise", c.replay_noise}, {"log_noise", c.log_noise}};
}

// Keys of the config file override flags; dashes and underscores are interchangeable.
inline void apply_config(RunConfig& c, const json& j) {
    if (!j.is_object()) throw ParameterError("config file must hold a JSON object");
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string key = it.key();
        std::replace(key.begin(), key.end(), '-', '_');
        const json& v = it.value();
        try {
            if (key == "n") c.n = v.get<int>();
            else if (key == "beta") c.beta = v.get<double>();
            else if (key == "seed") c.seed = v.get<std::uint64_t>();
            else if (key == "dt") c.dt = v.get<double>();
            else if (key == "t_end") c.t_end = v.get<double>();
            else if (key == "model") c.model = v.get<std::string>();
            else if (key == "route") c.route = v.get<std::string>();
            else if (key == "potential") c.potential = v.get<std::string>();
            else if (key == "rule") c.rule = v.get<std::string>();
            else if (key == "corner_m") c.corner_m = v.get<int>();
            else if (key == "trials") c.trials = v.get<int>();
            else if (key == "count") c.count = v.get<int>();
            else if (key == "jobs") c.jobs = v.get<int>();
            else if (key == "every") c.every = v.get<int>();
            else if (key == "weight_drift") c.weight_drift = v.get<double>();
            else if (key == "out") c.out = v.get<std::string>();
            else if (key == "init") c.init = v.get<std::string>();
            else if (key == "replay_noise") c.replay_noise = v.get<std::string>();
            else if (key == "log_noise") c.log_noise = v.get<bool>();
            else if (key == "suite") c.suite = v.get<std::string>();
            else throw ParameterError("config: unknown key '" + it.key() + "'");
        } catch (const json::exception& e) {
            throw ParameterError("config: bad value for '" + it.key() + "': " + e.what());
        }
    }
}

inline ChiRule parse_rule(const std::string& s) {
    if (s == "calibrated") return ChiRule::calibrated;
    if (s == "printed") return ChiRule::printed;
    throw ParameterError("unknown chi rule '" + s + "' (calibrated|printed)");
}

inline Potential parse_potential(const std::string& s) {
    if (s == "quadratic") return Potential::quadratic;
    if (s == "zero") return Potential::zero;
    throw ParameterError("unknown potential '" + s + "' (quadratic|zero)");
}

inline std::vector<Route> parse_routes(const std::string& s) {
    if (s == "a") return {Route::A};
    if (s == "b") return {Route::B};
    if (s == "both") return {Route::A, Route::B};
    throw ParameterError("unknown route '" + s + "' (a|b|both)");
}

inline int cmd_sample(const RunConfig& c) {
    if (c.n < 1) throw ParameterError("sample: --n must be >= 1");
    if (c.count < 1) throw ParameterError("sample: --count must be >= 1");
    if (!(c.beta > 0)) throw ParameterError("sample: --beta must be positive");
    const ChiRule rule = parse_rule(c.rule);
    const fs::path dir = c.out;
    ensure_directory(dir);
    std::vector<JacobiMatrix> mats(c.count);
    parallel_for(c.count, c.jobs, [&](int i) {
        Rng rng = make_stream(c.seed, i);
        mats[i] = sample_dumitriu_edelman(c.n, c.beta, rng, rule);
    });
    CsvWriter esd({"sample", "index", "value"});
    const double rn = std::sqrt(static_cast<double>(c.n));
    std::vector<std::string> outputs;
    for (int i = 0; i < c.count; ++i) {
        json j = to_json(mats[i]);
        j["beta"] = c.beta;
        j["rule"] = to_string(rule);
        j["replica"] = i;
        const std::string name = "sample_" + std::to_string(i) + ".json";
        write_json(dir / name, j);
        outputs.push_back(name);
        const Vec lam = spectral_decompose(mats[i]).lambda;
        for (int k = 0; k < c.n; ++k) esd.row(std::vector<double>{double(i), double(k), lam[k] / rn});
    }
    esd.save(dir / "esd.csv");
    outputs.push_back("esd.csv");
    write_manifest(dir, "sample", to_json(c), c.seed, {{"outputs", outputs}, {"chi_rule", to_string(rule)}});
    return exit_ok;
}

namespace detail {

struct Recorder {
    CsvWriter csv;
    int m;
    bool spectral;
    void add(const FlowState& s) {
        std::vector<double> row{s.t};
        if (spectral) {
            for (int i = 0; i < s.S.n(); ++i) row.push_back(s.S.lambda[i]);
        } else {
            for (int k = 1; k <= m; ++k) row.push_back(s.A.b_at(k));
            for (int k = 1; k < m; ++k) row.push_back(s.A.a_at(k));
        }
        csv.row(row);
    }
};

inline Recorder make_recorder(int n, int m, bool spectral) {
    std::vector<std::string> h{"t"};
    if (spectral) {
        for (int i = 1; i <= n; ++i) h.push_back("lambda_" + std::to_string(i));
    } else {
        for (int k = 1; k <= m; ++k) h.push_back("b_" + std::to_string(k));
        for (int k = 1; k < m; ++k) h.push_back("a_" + std::to_string(k));
    }
    return {CsvWriter(h), m, spectral};
}

inline json state_json(const FlowState& s) {
    json j = to_json(s.A);
    j["t"] = s.t;
    j["lambda"] = vec_to_json(s.S.lambda);
    j["qsq"] = vec_to_json(s.S.qsq);
    return j;
}

inline FlowState state_from_json(const json& j) {
    auto s = FlowState::from_matrix(jacobi_from_json(j));
    if (j.contains("t")) s.t = j.at("t").get<double>();
    return s;
}

struct NoiseRow {
    double t, dt;
    Vec dZ;
};

inline std::vector<NoiseRow> load_noise(const fs::path& p, int n) {
    std::vector<NoiseRow> rows;
    for (const auto& r : read_csv_numbers(p)) {
        if (static_cast<int>(r.size()) != n + 2) throw ParameterError("noise log width does not match --n");
        rows.push_back({r[0], r[1], Eigen::Map<const Vec>(r.data() + 2, n)});
    }
    return rows;
}

inline void save_noise(const fs::path& p, const std::vector<NoiseRecord>& log, int n) {
    std::vector<std::string> h{"t", "dt"};
    for (int i = 1; i <= n; ++i) h.push_back("dZ_" + std::to_string(i));
    CsvWriter w(h);
    for (const auto& r : log) {
        std::vector<double> row{r.t, r.dt};
        for (int i = 0; i < n; ++i) row.push_back(r.dZ[i]);
        w.row(row);
    }
    w.save(p);
}

}  // namespace detail

// Trajectory CSVs per replica: dbm_<r>.csv (eigenvalues) or <model>_<route>_<r>.csv (corner entries),
// all routes of a replica on one clock and one set of increments.
inline int cmd_evolve(const RunConfig& c) {
    if (c.model != "dbm" && c.model != "frozen" && c.model != "smooth")
        throw ParameterError("evolve: unknown model '" + c.model + "' (dbm|frozen|smooth)");
    const auto routes = parse_routes(c.route);
    const int trials = c.trials > 0 ? c.trials : 1;
    std::optional<FlowState> init;
    if (!c.init.empty()) init = detail::state_from_json(read_json(c.init));
    const int n = init ? init->A.n() : c.n;
    if (n < 1) throw ParameterError("evolve: --n must be >= 1");
    if (!(c.t_end > 0)) throw ParameterError("evolve: --t-end must be positive");
    if (c.corner_m < 0 || c.corner_m > n) throw ParameterError("evolve: --corner-m must lie in 0..n");
    FlowConfig cfg;
    cfg.n = n;
    cfg.beta = c.beta;
    cfg.potential = parse_potential(c.potential);
    cfg.dt = c.dt;
    cfg.t_end = c.t_end;
    cfg.seed = c.seed;
    cfg.validate();
    if (c.model != "dbm" && std::find(routes.begin(), routes.end(), Route::B) != routes.end() && n > cfg.route_b_max_n)
        throw ParameterError("evolve: route b is limited to n <= 64");
    std::vector<detail::NoiseRow> replay;
    if (!c.replay_noise.empty()) replay = detail::load_noise(c.replay_noise, n);

    const fs::path dir = c.out;
    ensure_directory(dir);
    const double h = cfg.step();
    const double t0 = init ? init->t : 0.0;
    const long steps = replay.empty() ? std::lround((c.t_end - t0) / h) : static_cast<long>(replay.size());
    if (steps < 1) throw ParameterError("evolve: nothing to integrate before --t-end");
    const long every = c.every > 0 ? c.every : std::max(1L, steps / 1000);
    const int m = c.corner_m > 0 ? c.corner_m : n;
    const Vec dR = Vec::LinSpaced(n, -0.5, 0.5) * c.weight_drift;

    std::vector<std::string> dumps(trials);
    std::vector<std::vector<std::string>> written(trials);
    try {
        parallel_for(trials, c.jobs, [&](int r) {
            Rng rng = make_stream(c.seed, r);
            const FlowState s0 =
                init ? *init : FlowState::from_matrix(sample_dumitriu_edelman(n, c.beta, rng, ChiRule::calibrated));
            const std::string tag = "_" + std::to_string(r);
            const bool dbm = c.model == "dbm";
            const std::vector<Route> rs = dbm ? std::vector<Route>{Route::A} : routes;
            std::vector<FlowState> st(rs.size(), s0);
            std::vector<detail::Recorder> rec;
            for (std::size_t k = 0; k < rs.size(); ++k) rec.push_back(detail::make_recorder(n, m, dbm));
            for (std::size_t k = 0; k < rs.size(); ++k) rec[k].add(st[k]);
            try {
                for (long k = 0; k < steps; ++k) {
                    double dt = h;
                    Vec dZ;
                    if (!replay.empty()) {
                        dt = replay[k].dt;
                        dZ = replay[k].dZ;
                    } else {
                        dt = std::min(adaptive_dt(st[0].S.lambda, cfg), c.t_end - st[0].t);
                        if (dt <= 0) break;
                        dZ = draw_increment(n, dt, rng);
                    }
                    for (std::size_t q = 0; q < rs.size(); ++q) {
                        if (dbm) {
                            dbm_advance(st[q].S.lambda, st[q].t, dZ, dt, cfg, rng, st[q].noise_log);
                        } else if (c.model == "frozen") {
                            st[q] = frozen_flow_advance(std::move(st[q]), cfg, rs[q], dZ, dt, rng);
                        } else {
                            st[q] = smooth_weight_advance(std::move(st[q]), dR, cfg, rs[q], dZ, dt, rng);
                        }
                    }
                    if ((k + 1) % every == 0 || k + 1 == steps)
                        for (std::size_t q = 0; q < rs.size(); ++q) rec[q].add(st[q]);
                }
            } catch (const StiffnessError& e) {
                const std::string name = "stiffness" + tag + ".txt";
                write_text(dir / name, std::string(e.what()) + "\n" + e.state_dump() + "\n");
                dumps[r] = (dir / name).string();
                throw;
            }
            const auto suffix = [&](std::size_t q) {
                return dbm ? std::string() : std::string(rs[q] == Route::A ? "_a" : "_b");
            };
            for (std::size_t q = 0; q < rs.size(); ++q) {
                if (dbm) st[q].A = reconstruct_jacobi(st[q].S);
                const std::string base = c.model + suffix(q) + tag;
                rec[q].csv.save(dir / (base + ".csv"));
                write_json(dir / ("final" + suffix(q) + tag + ".json"), detail::state_json(st[q]));
                written[r].push_back(base + ".csv");
            }
            if (c.log_noise) {
                detail::save_noise(dir / ("noise" + tag + ".csv"), st[0].noise_log, n);
                written[r].push_back("noise" + tag + ".csv");
            }
        });
    } catch (const StiffnessError& e) {
        for (const auto& d : dumps)
            if (!d.empty()) std::cerr << "stiffness: " << e.what() << "; state dump at " << d << "\n";
        write_manifest(dir, "evolve", to_json(c), c.seed, {{"status", "stiffness"}});
        return exit_numerical;
    }
    json outputs = json::array();
    for (const auto& w : written)
        for (const auto& f : w) outputs.push_back(f);
    write_manifest(dir, "evolve", to_json(c), c.seed, {{"outputs", outputs}, {"steps", steps}});
    return exit_ok;
}

inline int cmd_verify(const RunConfig& c, std::ostream& os = std::cout) {
    const auto& names = suite_names();
    if (std::find(names.begin(), names.end(), c.suite) == names.end())
        throw ParameterError("verify: unknown suite '" + c.suite + "'");
    VerifyParams p;
    p.n = c.n;
    p.trials = c.trials;
    p.seed = c.seed;
    p.corner_m = c.corner_m > 0 ? c.corner_m : 4;
    p.jobs = c.jobs;
    const auto rep = run_suite(c.suite, p);
    for (const auto& k : rep.checks) {
        os << (k.pass ? "ok   " : "FAIL ") << k.name << " measured=" << format_double(k.measured);
        if (!std::isnan(k.threshold)) os << " threshold=" << format_double(k.threshold);
        if (!k.note.empty()) os << " (" << k.note << ")";
        os << "\n";
    }
    const fs::path dir = c.out;
    ensure_directory(dir);
    write_json(dir / "report.json", to_json(rep));
    write_manifest(dir, "verify", to_json(c), c.seed, {{"passed", rep.passed()}});
    return rep.passed() ? exit_ok : exit_verification;
}

// Maps library errors onto exit codes and a one-line diagnostic.
template <class F>
int run_guarded(F&& f, std::ostream& err = std::cerr) {
    try {
        return f();
    } catch (const ParameterError& e) {
        err << "parameter error: " << e.what() << "\n";
        return exit_parameter;
    } catch (const ShapeError& e) {
        err << "parameter error: " << e.what() << "\n";
        return exit_parameter;
    } catch (const IoError& e) {
        err << "i/o error: " << e.what() << "\n";
        return exit_parameter;
    } catch (const Error& e) {
        err << "numerical error: " << e.what() << "\n";
        return exit_numerical;
    }
}

}  // namespace tridyson
