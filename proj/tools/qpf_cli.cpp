// qpf: inspect cases, solve single instances, train and evaluate models.
//
// Exit status: 0 success, 1 numerical failure, 2 usage or input error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "qpf/baseline_dnn.hpp"
#include "qpf/case_ingest.hpp"
#include "qpf/grid_model.hpp"
#include "qpf/solver.hpp"
#include "qpf/vqc.hpp"
#include "qpf/xbm.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string case_file;
    std::string config;
    std::string out = "qpf_out";
    std::uint64_t seed = 0;
    std::size_t layers = 3;
    double step_size = 5e-5;
    double decay = 1.0;
    std::size_t iters = 3'000'000;
    double grad_tol = 0.01;
    std::size_t instances = 10;
    std::size_t batch_size = 0;
    std::string model = "qml";
    std::size_t shots = 0;
    std::size_t trace_every = 1000;
    std::string qml_artifact;
    std::string dnn_artifact;
};

void write_file(const fs::path &p, const std::string &text) {
    std::ofstream out(p);
    if (!out) {
        throw qpf::IoError("cannot write '" + p.string() + "'");
    }
    out << text;
}

fs::path prepare_out(const std::string &dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw qpf::IoError("cannot create output directory '" + dir + "': " + ec.message());
    }
    return fs::path(dir);
}

json read_json(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw qpf::IoError("cannot open '" + path + "'");
    }
    try {
        return json::parse(in);
    } catch (const json::exception &e) {
        throw qpf::ValidationError(qpf::ValidationCode::malformed_document, path + ": " + e.what());
    }
}

/// Values from --config apply only where the flag was not given.
template <class T>
void from_config(const json &cfg, const char *key, CLI::App &app, const std::string &flag, T &target) {
    if (!cfg.contains(key) || app.count(flag) > 0) {
        return;
    }
    try {
        target = cfg.at(key).get<T>();
    } catch (const json::exception &e) {
        throw UsageError(std::string("config key '") + key + "': " + e.what());
    }
}

json apply_config(Options &o, CLI::App &app) {
    if (o.config.empty()) {
        return json::object();
    }
    const json cfg = read_json(o.config);
    if (!cfg.is_object()) {
        throw UsageError("config file must hold a JSON object");
    }
    from_config(cfg, "case", app, "--case", o.case_file);
    from_config(cfg, "out", app, "--out", o.out);
    from_config(cfg, "seed", app, "--seed", o.seed);
    from_config(cfg, "layers", app, "--layers", o.layers);
    from_config(cfg, "step-size", app, "--step-size", o.step_size);
    from_config(cfg, "decay", app, "--decay", o.decay);
    from_config(cfg, "iters", app, "--iters", o.iters);
    from_config(cfg, "grad-tol", app, "--grad-tol", o.grad_tol);
    from_config(cfg, "instances", app, "--instances", o.instances);
    from_config(cfg, "batch-size", app, "--batch-size", o.batch_size);
    from_config(cfg, "model", app, "--model", o.model);
    from_config(cfg, "shots", app, "--shots", o.shots);
    from_config(cfg, "trace-every", app, "--trace-every", o.trace_every);
    return cfg;
}

qpf::SpecSet load_specs(const Options &o) {
    if (o.case_file.empty()) {
        throw UsageError("--case is required");
    }
    const auto c = qpf::load_case_file(o.case_file);
    return qpf::build_specs(c, qpf::build_ybus(c));
}

qpf::TrainConfig train_config(const Options &o) {
    qpf::TrainConfig cfg;
    cfg.mu_theta = cfg.mu_alpha = o.step_size;
    cfg.decay = o.decay;
    cfg.max_iters = o.iters;
    cfg.grad_tol = o.grad_tol;
    cfg.batch_size = o.batch_size;
    cfg.seed = o.seed;
    cfg.trace_every = o.trace_every;
    cfg.gradient = qpf::GradientMethod::adjoint;
    qpf::validate(cfg);
    return cfg;
}

std::string trace_csv(const qpf::TrainTrace &t) {
    std::ostringstream os;
    qpf::write_trace_csv(os, t);
    return os.str();
}

// ---------------------------------------------------------------------------

int cmd_inspect(const Options &o) {
    const auto specs = load_specs(o);
    const auto d = qpf::decompose(specs);
    std::size_t counts[3] = {0, 0, 0};
    for (auto t : specs.bus_types) {
        ++counts[static_cast<int>(t)];
    }
    json report;
    report["N"] = specs.n_buses;
    report["S"] = specs.size();
    report["n_qubits"] = specs.n_qubits;
    report["N_pad"] = specs.dim();
    report["bus_types"] = {{"slack", counts[0]}, {"pv", counts[1]}, {"pq", counts[2]}};
    report["xbm"] = qpf::decomposition_summary(d);

    std::cout << "N=" << specs.n_buses << " S=" << specs.size() << " n_qubits=" << specs.n_qubits
              << " N_pad=" << specs.dim() << "\n";
    std::cout << "buses: slack=" << counts[0] << " pv=" << counts[1] << " pq=" << counts[2] << "\n";
    std::cout << "XBM groups C=" << d.size() << "\n";
    for (const auto &g : d.groups) {
        std::size_t nnz = 0;
        for (std::size_t s = 0; s < d.s_count; ++s) {
            nnz += g.nnz(s);
        }
        std::cout << "  offset=" << g.offset << " part=" << qpf::to_string(g.part)
                  << " gates=" << g.rotation.gates.size() << " nnz=" << nnz << "\n";
    }
    const auto out = prepare_out(o.out);
    write_file(out / "inspect.json", report.dump(2) + "\n");
    return 0;
}

int cmd_solve(const Options &o) {
    const auto specs = load_specs(o);
    if (o.instances < 1) {
        throw UsageError("--instances must be at least 1");
    }
    auto cfg = train_config(o);
    std::size_t rejected = 0;
    const auto batch = qpf::sample_feasible_instances(specs, o.instances, o.seed, {}, &rejected);
    if (rejected > 0) {
        std::cerr << "notice: resampled " << rejected << " instance(s) for which Newton-Raphson did not converge\n";
    }
    qpf::AnsatzConfig ac;
    ac.layers = o.layers;
    const auto problem = qpf::make_problem(specs, ac);
    const auto out = prepare_out(o.out);
    {
        std::ofstream csv(out / "instances.csv");
        qpf::write_instances_csv(csv, specs, batch);
    }

    std::vector<qpf::SolveResult> results;
    json summary;
    summary["instances"] = json::array();
    for (std::size_t k = 0; k < batch.size(); ++k) {
        cfg.seed = o.seed + k;
        auto r = qpf::solve_single(problem, batch.instances[k], cfg);
        double reported = r.final_nmae;
        if (o.shots > 0) {
            const auto f = qpf::measure_F_s(qpf::prepare(problem, r.theta), problem.decomp, {o.shots, o.seed + k});
            std::vector<double> bh(f.size());
            for (std::size_t s = 0; s < f.size(); ++s) {
                bh[s] = r.alpha * f[s];
            }
            reported = qpf::nmae(bh, batch.instances[k]);
        }
        std::cout << "instance " << k << ": nmae=" << std::setprecision(6) << reported << " alpha=" << r.alpha
                  << " iterations=" << r.iterations << " stop=" << r.trace.stop_reason << "\n";
        write_file(out / ("trace_" + std::to_string(k) + ".csv"), trace_csv(r.trace));
        summary["instances"].push_back({{"index", k},
                                        {"nmae", reported},
                                        {"alpha", r.alpha},
                                        {"iterations", r.iterations},
                                        {"stop_reason", r.trace.stop_reason},
                                        {"converged", r.trace.converged}});
        results.push_back(std::move(r));
    }

    // Aggregate on the union of recorded iterations; a finished trace holds its last value.
    std::vector<std::size_t> iters;
    for (const auto &r : results) {
        for (const auto &rec : r.trace.records) {
            iters.push_back(rec.iter);
        }
    }
    std::sort(iters.begin(), iters.end());
    iters.erase(std::unique(iters.begin(), iters.end()), iters.end());
    std::ostringstream agg;
    agg << "iter,mean_nmae,std_nmae\n" << std::setprecision(17);
    std::vector<std::size_t> pos(results.size(), 0);
    for (const auto it : iters) {
        std::vector<double> v;
        for (std::size_t k = 0; k < results.size(); ++k) {
            const auto &rec = results[k].trace.records;
            while (pos[k] + 1 < rec.size() && rec[pos[k] + 1].iter <= it) {
                ++pos[k];
            }
            v.push_back(rec[pos[k]].nmae);
        }
        const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
        double var = 0.0;
        for (double x : v) {
            var += (x - mean) * (x - mean);
        }
        agg << it << ',' << mean << ',' << std::sqrt(var / static_cast<double>(v.size())) << '\n';
    }
    write_file(out / "aggregate.csv", agg.str());

    double mean = 0.0;
    for (const auto &r : summary["instances"]) {
        mean += r["nmae"].get<double>();
    }
    mean /= static_cast<double>(results.size());
    summary["mean_nmae"] = mean;
    summary["seed"] = o.seed;
    summary["layers"] = o.layers;
    summary["step_size"] = o.step_size;
    write_file(out / "summary.json", summary.dump(2) + "\n");
    std::cout << "mean final NMAE " << mean << " over " << results.size() << " instance(s)\n";
    return 0;
}

struct Split {
    qpf::InstanceBatch train;
    qpf::InstanceBatch test;
};

/// Seeded 80/20 split of `instances` feasible draws.
Split make_split(const qpf::SpecSet &specs, const Options &o) {
    if (o.instances < 5) {
        throw UsageError("--instances must be at least 5 for an 80/20 split");
    }
    const auto all = qpf::sample_feasible_instances(specs, o.instances, o.seed);
    std::vector<std::size_t> idx(all.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::mt19937_64 rng(o.seed ^ 0x5eedULL);
    for (std::size_t i = idx.size(); i > 1; --i) {
        std::uniform_int_distribution<std::size_t> u(0, i - 1);
        std::swap(idx[i - 1], idx[u(rng)]);
    }
    const std::size_t n_train = all.size() * 4 / 5;
    Split s;
    s.train.seed = s.test.seed = all.seed;
    for (std::size_t i = 0; i < idx.size(); ++i) {
        (i < n_train ? s.train : s.test).instances.push_back(all.instances[idx[i]]);
    }
    return s;
}

int cmd_train(const Options &o) {
    const auto specs = load_specs(o);
    if (o.model != "qml" && o.model != "dnn") {
        throw UsageError("--model must be qml or dnn");
    }
    const auto cfg = train_config(o);
    const auto split = make_split(specs, o);
    const auto data = qpf::normalize_data(split.train);
    const auto out = prepare_out(o.out);
    {
        std::ofstream tr(out / "train.csv");
        qpf::write_instances_csv(tr, specs, split.train);
        std::ofstream te(out / "test.csv");
        qpf::write_instances_csv(te, specs, split.test);
    }
    json artifact;
    qpf::TrainTrace trace;
    if (o.model == "qml") {
        qpf::AnsatzConfig ac;
        ac.layers = o.layers;
        const qpf::EmbeddingConfig ec{specs.size(), specs.n_qubits, 1, qpf::GateKind::RY};
        const auto problem = qpf::make_problem(specs, ac, ec);
        auto res = qpf::train_qml(problem, split.train, data, cfg, ac, ec);
        artifact = qpf::artifact_to_json(res.artifact);
        trace = std::move(res.trace);
        std::cout << "qml: " << res.artifact.theta.size() << " weights, alpha=" << res.artifact.alpha << "\n";
    } else {
        qpf::MlpConfig mc;
        mc.input_dim = specs.size();
        mc.output_dim = 2 * specs.dim();
        auto res = qpf::train_dnn(mc, specs, split.train, data, cfg);
        artifact = qpf::dnn_to_json(res.model);
        trace = std::move(res.trace);
        std::cout << "dnn: " << mc.weight_count() << " weights\n";
    }
    write_file(out / (o.model + "_model.json"), artifact.dump(2) + "\n");
    write_file(out / (o.model + "_trace.csv"), trace_csv(trace));
    std::cout << "final training NMAE " << trace.records.back().nmae << " after " << trace.records.back().iter
              << " iterations (" << trace.stop_reason << ")\n";
    return 0;
}

int cmd_eval(const Options &o) {
    if (o.qml_artifact.empty() && o.dnn_artifact.empty()) {
        throw UsageError("eval needs --qml and/or --dnn");
    }
    const auto specs = load_specs(o);
    const auto split = make_split(specs, o);
    std::optional<std::vector<double>> q;
    std::optional<std::vector<double>> d;
    if (!o.qml_artifact.empty()) {
        const auto m = qpf::artifact_from_json(read_json(o.qml_artifact));
        q = qpf::evaluate(m, qpf::problem_for(m, specs), split.test);
    }
    if (!o.dnn_artifact.empty()) {
        const auto m = qpf::dnn_from_json(read_json(o.dnn_artifact));
        if (m.config.input_dim != specs.size()) {
            throw qpf::ShapeError("dnn was trained for S=" + std::to_string(m.config.input_dim) + ", case has S=" +
                                  std::to_string(specs.size()));
        }
        d = qpf::evaluate_dnn(m, specs, split.test);
    }
    std::ostringstream csv;
    csv << "instance";
    if (q) {
        csv << ",qml_nmae";
    }
    if (d) {
        csv << ",dnn_nmae";
    }
    csv << '\n' << std::setprecision(17);
    std::size_t wins = 0;
    for (std::size_t t = 0; t < split.test.size(); ++t) {
        csv << t;
        if (q) {
            csv << ',' << (*q)[t];
        }
        if (d) {
            csv << ',' << (*d)[t];
        }
        csv << '\n';
        if (q && d && (*q)[t] < (*d)[t]) {
            ++wins;
        }
    }
    const auto out = prepare_out(o.out);
    write_file(out / "eval.csv", csv.str());
    auto mean = [](const std::vector<double> &v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    if (q) {
        std::cout << "qml mean test NMAE " << mean(*q) << "\n";
    }
    if (d) {
        std::cout << "dnn mean test NMAE " << mean(*d) << "\n";
    }
    if (q && d) {
        std::cout << "QML better on " << wins << "/" << split.test.size() << "\n";
    }
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"Quantum power flow: case inspection, single-instance solves, QML and DNN training"};
    app.require_subcommand(1);
    Options o;

    auto add_common = [&o](CLI::App *c) {
        c->add_option("--case", o.case_file, "MATPOWER .m or JSON case file");
        c->add_option("--config", o.config, "JSON config; flags given on the command line win");
        c->add_option("--out", o.out, "output directory");
        c->add_option("--seed", o.seed, "master seed");
    };
    auto add_training = [&o](CLI::App *c) {
        c->add_option("--layers", o.layers, "ansatz layers L");
        c->add_option("--step-size", o.step_size, "initial step size");
        c->add_option("--decay", o.decay, "per-iteration step decay factor");
        c->add_option("--iters", o.iters, "maximum iterations");
        c->add_option("--grad-tol", o.grad_tol, "stop when the gradient norm falls below this");
        c->add_option("--instances", o.instances, "number of instances");
        c->add_option("--batch-size", o.batch_size, "mini-batch size (0 = full batch)");
        c->add_option("--shots", o.shots, "shots per measured circuit for reported values (0 = exact)");
        c->add_option("--trace-every", o.trace_every, "record the trace every k iterations");
    };

    auto *inspect = app.add_subcommand("inspect", "summarize a case and its measurement groups");
    add_common(inspect);

    auto *solve = app.add_subcommand("solve", "single-instance QPF on seeded perturbed instances");
    add_common(solve);
    add_training(solve);

    auto *train = app.add_subcommand("train", "train a QML or DNN model on a seeded 80/20 split");
    add_common(train);
    add_training(train);
    train->add_option("--model", o.model, "qml or dnn");

    auto *eval = app.add_subcommand("eval", "compare trained models on the held-out split");
    add_common(eval);
    eval->add_option("--instances", o.instances, "number of instances (must match training)");
    eval->add_option("--qml", o.qml_artifact, "QML model artifact");
    eval->add_option("--dnn", o.dnn_artifact, "DNN model artifact");
    eval->add_option("--model", o.model, "unused; accepted for symmetry with train");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    CLI::App *active = app.get_subcommands().front();
    const bool is_train = active == train;
    const bool is_eval = active == eval;
    try {
        const json cfg = apply_config(o, *active);
        auto fallback = [&](const char *key, auto &target, auto value) {
            if (!active->count(std::string("--") + key) && !cfg.contains(key)) {
                target = value;
            }
        };
        if (is_train) {
            // settings of the multi-instance comparison
            const bool dnn = o.model == "dnn";
            fallback("layers", o.layers, std::size_t{6});
            fallback("instances", o.instances, std::size_t{100});
            fallback("iters", o.iters, dnn ? std::size_t{40000} : std::size_t{10000});
            fallback("trace-every", o.trace_every, std::size_t{100});
            fallback("decay", o.decay, dnn ? 0.9999 : 0.9995);
            fallback("step-size", o.step_size, dnn ? 1e-4 : 5e-5);
        }
        if (is_eval) {
            fallback("instances", o.instances, std::size_t{100});
        }
        if (active == inspect) {
            return cmd_inspect(o);
        }
        if (active == solve) {
            return cmd_solve(o);
        }
        if (is_train) {
            return cmd_train(o);
        }
        return cmd_eval(o);
    } catch (const qpf::NumericalError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const UsageError &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const qpf::Error &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
