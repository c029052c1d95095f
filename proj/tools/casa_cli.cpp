// casa: weight-space analysis and data-free LoRA transfer for distilled
// model families. Subcommands: analyze | cluster | transfer | ablate.
//
// Machine-readable output goes to files and stdout; progress goes to
// stderr. Any failure prints an error JSON object and exits with code 2.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "casa/ablation.hpp"
#include "casa/errors.hpp"
#include "casa/kernels.hpp"
#include "casa/report_json.hpp"
#include "casa/routing.hpp"
#include "casa/spectral.hpp"
#include "casa/tensor_store.hpp"
#include "casa/transfer.hpp"

using nlohmann::json;

namespace {

struct RunOptions {
    std::string source_path;
    std::string target_path;
    std::string lora_path;
    std::string out_dir;
    casa::CasaConfig config;
    std::string mode; // cluster: rotation-graph | analysis-graph; ablate: partial | overactivate
    std::vector<double> q_sweep{0.5};
    std::vector<std::string> sim_windows;
    std::uint64_t seed = 0;
    double noise_mean = 2.0;
    double noise_var = 5.0;
    double block_fraction = 0.05;
    std::string include = "*";
    std::string exclude;
    int jobs = 0;
};

bool glob_match(std::string_view pattern, std::string_view text) {
    std::size_t p = 0, t = 0;
    std::size_t star = std::string_view::npos, mark = 0;
    while (t < text.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == text[t])) {
            ++p;
            ++t;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = t;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            t = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

bool key_selected(const RunOptions& opt, const std::string& key) {
    if (!glob_match(opt.include, key)) return false;
    if (!opt.exclude.empty() && glob_match(opt.exclude, key)) return false;
    return true;
}

std::vector<double> parse_sweep(const std::string& text) {
    std::vector<double> values;
    std::size_t begin = 0;
    while (begin <= text.size()) {
        const std::size_t end = std::min(text.find(',', begin), text.size());
        const std::string token = text.substr(begin, end - begin);
        if (!token.empty()) {
            try {
                values.push_back(std::stod(token));
            } catch (const std::exception&) {
                throw casa::UsageError("bad sweep value \"" + token + "\"");
            }
        }
        begin = end + 1;
    }
    if (values.empty()) throw casa::UsageError("empty q sweep");
    return values;
}

struct Window {
    std::size_t begin = 0;
    std::size_t end = 0;
};

Window parse_window(const std::string& text) {
    const std::size_t colon = text.find(':');
    if (colon == std::string::npos)
        throw casa::UsageError("similarity window must be start:end, got \"" + text + "\"");
    try {
        Window w;
        w.begin = std::stoul(text.substr(0, colon));
        w.end = std::stoul(text.substr(colon + 1));
        if (w.end <= w.begin) throw casa::UsageError("empty similarity window \"" + text + "\"");
        return w;
    } catch (const casa::Error&) {
        throw;
    } catch (const std::exception&) {
        throw casa::UsageError("bad similarity window \"" + text + "\"");
    }
}

void load_manifest(const std::string& path, RunOptions& opt) {
    std::ifstream in(path);
    if (!in) throw casa::IoError("cannot open manifest \"" + path + "\"");
    json manifest;
    try {
        manifest = json::parse(in);
    } catch (const json::exception& ex) {
        throw casa::UsageError(std::string("manifest is not valid JSON: ") + ex.what());
    }
    if (!manifest.is_object()) throw casa::UsageError("manifest must be a JSON object");
    for (const auto& [key, value] : manifest.items()) {
        try {
            if (key == "source") opt.source_path = value.get<std::string>();
            else if (key == "target") opt.target_path = value.get<std::string>();
            else if (key == "lora") opt.lora_path = value.get<std::string>();
            else if (key == "output") opt.out_dir = value.get<std::string>();
            else if (key == "config") opt.config = casa::config_from_json(value, opt.config);
            else if (key == "mode") opt.mode = value.get<std::string>();
            else if (key == "q_sweep") opt.q_sweep = value.get<std::vector<double>>();
            else if (key == "sim_windows")
                opt.sim_windows = value.get<std::vector<std::string>>();
            else if (key == "seed") opt.seed = value.get<std::uint64_t>();
            else if (key == "noise_mean") opt.noise_mean = value.get<double>();
            else if (key == "noise_var") opt.noise_var = value.get<double>();
            else if (key == "block_fraction") opt.block_fraction = value.get<double>();
            else if (key == "include") opt.include = value.get<std::string>();
            else if (key == "exclude") opt.exclude = value.get<std::string>();
            else if (key == "jobs") opt.jobs = value.get<int>();
            else throw casa::UsageError("unknown manifest key \"" + key + "\"");
        } catch (const json::exception& ex) {
            throw casa::UsageError("manifest key \"" + key + "\": " + ex.what());
        }
    }
}

int resolve_jobs(int flag_value) {
    if (flag_value > 0) return flag_value;
    if (const char* env = std::getenv("CASA_JOBS")) {
        const int parsed = std::atoi(env);
        if (parsed > 0) return parsed;
    }
    return 0; // library default: all cores
}

json command_json(const RunOptions& opt, const std::string& command) {
    json j{{"schema", casa::kReportSchema},
           {"command", command},
           {"config", casa::config_to_json(opt.config)},
           {"source", opt.source_path},
           {"include", opt.include},
           {"exclude", opt.exclude}};
    if (!opt.target_path.empty()) j["target"] = opt.target_path;
    if (!opt.lora_path.empty()) j["lora"] = opt.lora_path;
    return j;
}

void write_report(const std::string& out_dir, const json& report) {
    std::filesystem::create_directories(out_dir);
    const std::string path = out_dir + "/report.json";
    std::ofstream out(path);
    if (!out) throw casa::IoError("cannot write \"" + path + "\"");
    out << report.dump(2) << "\n";
}

void progress(const std::string& line) { std::cerr << line << "\n"; }

using casa::Matrix;

Matrix row_vector(const std::vector<double>& values) {
    Matrix m(1, values.size());
    for (std::size_t i = 0; i < values.size(); ++i) m(0, i) = values[i];
    return m;
}

// ---------------------------------------------------------------- analyze

int cmd_analyze(const RunOptions& opt) {
    if (opt.source_path.empty()) throw casa::UsageError("analyze requires --source");
    if (opt.out_dir.empty()) throw casa::UsageError("analyze requires --out");

    std::vector<Window> windows;
    for (const std::string& text : opt.sim_windows) windows.push_back(parse_window(text));

    const casa::WeightMap source = casa::load_checkpoint(opt.source_path);
    std::optional<casa::WeightMap> target;
    if (!opt.target_path.empty()) target = casa::load_checkpoint(opt.target_path);
    std::optional<casa::DeltaMap> lora_delta;
    if (!opt.lora_path.empty())
        lora_delta = casa::materialize_lora_delta(
            casa::pair_lora(casa::load_checkpoint(opt.lora_path)));

    casa::WeightMap tensors;
    tensors.dtype = casa::Dtype::F64;
    json layers = json::array();
    std::size_t done = 0, total = source.size();
    for (const auto& [key, ws] : source) {
        ++done;
        if (!key_selected(opt, key)) continue;
        progress("[analyze " + std::to_string(done) + "/" + std::to_string(total) +
                 "] " + key);
        const casa::SvdTriple t = casa::svd(ws);
        json layer{{"key", key}, {"m", t.m()}};
        layer["k90"] = casa::topk_energy(t.s, opt.config.energy_fraction);
        tensors.insert(key + "::sigma_source", row_vector(t.s));

        auto compare = [&](const Matrix& adapted, const std::string& tag) {
            const casa::SvdTriple ta = casa::svd(adapted);
            layer["rho2_" + tag] = casa::spectral_rigidity(t.s, ta.s);
            tensors.insert(key + "::sigma_" + tag, row_vector(ta.s));
            for (const Window& w : windows) {
                if (w.end > t.m()) continue;
                Matrix u_pre(t.u.rows(), w.end - w.begin);
                Matrix u_post(t.u.rows(), w.end - w.begin);
                for (std::size_t i = 0; i < t.u.rows(); ++i)
                    for (std::size_t j = w.begin; j < w.end; ++j) {
                        u_pre(i, j - w.begin) = t.u(i, j);
                        u_post(i, j - w.begin) = ta.u(i, j);
                    }
                const casa::SimilarityMatrix sim =
                    casa::subspace_similarity(u_pre, u_post);
                tensors.insert(key + "::sim_" + tag + "::" + std::to_string(w.begin) +
                                   "_" + std::to_string(w.end),
                               sim.values);
            }
        };
        if (target) {
            const Matrix* wt = target->find(key);
            if (wt && wt->same_shape(ws)) compare(*wt, "target");
        }
        if (lora_delta) {
            const Matrix* dl = lora_delta->entries.find(key);
            if (dl && dl->same_shape(ws))
                compare(casa::kernels::axpby(1.0, ws, 1.0, *dl), "lora");
        }
        layers.push_back(std::move(layer));
    }

    std::filesystem::create_directories(opt.out_dir);
    casa::save_checkpoint(tensors, opt.out_dir + "/analysis_tensors.safetensors");
    json report = command_json(opt, "analyze");
    report["sim_windows"] = opt.sim_windows;
    report["layers"] = std::move(layers);
    report["tensors"] = "analysis_tensors.safetensors";
    write_report(opt.out_dir, report);
    return 0;
}

// ---------------------------------------------------------------- cluster

json metrics_json(const casa::ClusterMetrics& metrics) {
    return json{{"send_density", metrics.send_density},
                {"recv_density", metrics.recv_density},
                {"coherence_send", metrics.coherence_send},
                {"coherence_recv", metrics.coherence_recv},
                {"energy_cv_send", metrics.energy_cv_send},
                {"energy_cv_recv", metrics.energy_cv_recv}};
}

int cmd_cluster(const RunOptions& opt) {
    if (opt.source_path.empty()) throw casa::UsageError("cluster requires --source");
    if (opt.out_dir.empty()) throw casa::UsageError("cluster requires --out");
    if (opt.lora_path.empty() && opt.target_path.empty())
        throw casa::UsageError("cluster requires --lora and/or --target");
    casa::ClusterMethod method = casa::ClusterMethod::rotation_graph;
    if (opt.mode == "analysis-graph") method = casa::ClusterMethod::analysis_graph;
    else if (!opt.mode.empty() && opt.mode != "rotation-graph")
        throw casa::UsageError("cluster mode must be rotation-graph or analysis-graph");

    const casa::WeightMap source = casa::load_checkpoint(opt.source_path);
    std::optional<casa::WeightMap> target;
    if (!opt.target_path.empty()) target = casa::load_checkpoint(opt.target_path);
    std::optional<casa::DeltaMap> lora_delta;
    if (!opt.lora_path.empty())
        lora_delta = casa::materialize_lora_delta(
            casa::pair_lora(casa::load_checkpoint(opt.lora_path)));

    casa::WeightMap tensors;
    tensors.dtype = casa::Dtype::F64;
    json layers = json::array();
    std::size_t done = 0, total = source.size();
    for (const auto& [key, ws] : source) {
        ++done;
        if (!key_selected(opt, key)) continue;

        const Matrix* delta_lora =
            lora_delta ? lora_delta->entries.find(key) : nullptr;
        const Matrix* wt = target ? target->find(key) : nullptr;
        if (!delta_lora && !wt) continue;
        progress("[cluster " + std::to_string(done) + "/" + std::to_string(total) +
                 "] " + key);

        const casa::SvdTriple t = casa::svd(ws);
        const std::size_t k = casa::topk_energy(t.s, opt.config.energy_fraction);

        std::optional<casa::RoutingMatrix> c_lora, c_fft;
        if (delta_lora)
            c_lora = casa::project_routing(t, *delta_lora, casa::DeltaKind::lora, key);
        if (wt)
            c_fft = casa::project_routing(
                t, casa::kernels::axpby(1.0, *wt, -1.0, ws), casa::DeltaKind::fft, key);

        casa::ClusterSet clusters;
        if (method == casa::ClusterMethod::rotation_graph) {
            const casa::RoutingMatrix& c = c_lora ? *c_lora : *c_fft;
            clusters = casa::cluster_rotation_graph(c, t.s, k, opt.config.tau,
                                                    opt.config.epsilon);
        } else {
            const Matrix adapted =
                delta_lora ? casa::kernels::axpby(1.0, ws, 1.0, *delta_lora) : *wt;
            const casa::SvdTriple ta = casa::svd(adapted);
            clusters = casa::cluster_similarity_graph(t.u, ta.u, k);
        }

        json layer{{"key", key},
                   {"m", t.m()},
                   {"k", k},
                   {"M", clusters.count()},
                   {"method", std::string(casa::cluster_method_name(clusters.method))},
                   {"clusters", clusters.clusters}};
        if (c_lora) {
            const casa::ClusterMetrics metrics = casa::cluster_metrics(*c_lora, clusters);
            layer["metrics_lora"] = metrics_json(metrics);
            tensors.insert(key + "::C_lora", c_lora->c);
            tensors.insert(key + "::rms_lora", metrics.rms_block);
        }
        if (c_fft) {
            const casa::ClusterMetrics metrics = casa::cluster_metrics(*c_fft, clusters);
            layer["metrics_fft"] = metrics_json(metrics);
            tensors.insert(key + "::C_fft", c_fft->c);
            tensors.insert(key + "::rms_fft", metrics.rms_block);
        }
        if (c_lora && c_fft) {
            const casa::InterferenceMaps maps =
                casa::interference_maps(*c_lora, *c_fft, clusters, opt.config.epsilon);
            tensors.insert(key + "::overlap", maps.overlap);
            tensors.insert(key + "::alignment", maps.alignment);
        }
        layers.push_back(std::move(layer));
    }

    std::filesystem::create_directories(opt.out_dir);
    casa::save_checkpoint(tensors, opt.out_dir + "/cluster_tensors.safetensors");
    json report = command_json(opt, "cluster");
    report["mode"] = std::string(casa::cluster_method_name(method));
    report["layers"] = std::move(layers);
    report["tensors"] = "cluster_tensors.safetensors";
    write_report(opt.out_dir, report);
    return 0;
}

// --------------------------------------------------------------- transfer

int cmd_transfer(const RunOptions& opt) {
    if (opt.source_path.empty() || opt.target_path.empty() || opt.lora_path.empty())
        throw casa::UsageError("transfer requires --source, --target and --lora");
    if (opt.out_dir.empty()) throw casa::UsageError("transfer requires --out");

    const casa::WeightMap source = casa::load_checkpoint(opt.source_path);
    const casa::WeightMap target = casa::load_checkpoint(opt.target_path);
    const casa::LoraAdapter adapter =
        casa::pair_lora(casa::load_checkpoint(opt.lora_path));
    for (const std::string& key : adapter.unmatched_keys)
        progress("[transfer] unpaired LoRA-like key: " + key);

    casa::LoraAdapter selected;
    selected.convention = adapter.convention;
    selected.dtype = adapter.dtype;
    std::vector<std::string> skipped;
    for (const auto& [base, pair] : adapter) {
        if (key_selected(opt, base)) selected.insert(base, pair);
        else skipped.push_back(base);
    }
    progress("[transfer] " + std::to_string(selected.size()) + " layer(s), jobs=" +
             std::to_string(resolve_jobs(opt.jobs)));

    const casa::ModelTransfer result = casa::transfer_model(
        source, target, selected, opt.config, resolve_jobs(opt.jobs));

    std::filesystem::create_directories(opt.out_dir);
    casa::save_checkpoint(casa::adapter_to_weights(result.adapter),
                          opt.out_dir + "/adapter.safetensors");

    json report = command_json(opt, "transfer");
    report["adapter"] = "adapter.safetensors";
    report["skipped_keys"] = skipped;
    json layers = json::array();
    for (const casa::LayerReport& layer : result.report.layers)
        layers.push_back(casa::layer_report_to_json(layer));
    report["layers"] = std::move(layers);
    write_report(opt.out_dir, report);
    return 0;
}

// ----------------------------------------------------------------- ablate

std::string format_q(double q) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%g", q);
    return buf;
}

int cmd_ablate(const RunOptions& opt) {
    if (opt.source_path.empty() || opt.target_path.empty())
        throw casa::UsageError("ablate requires --source and --target");
    if (opt.out_dir.empty()) throw casa::UsageError("ablate requires --out");
    const std::string mode = opt.mode.empty() ? "partial" : opt.mode;
    if (mode != "partial" && mode != "overactivate")
        throw casa::UsageError("ablate mode must be partial or overactivate");

    casa::WeightMap source = casa::load_checkpoint(opt.source_path);
    const casa::WeightMap target = casa::load_checkpoint(opt.target_path);

    // Filtering works by restricting which source layers are eligible;
    // unmatched target layers pass through untouched.
    casa::WeightMap filtered;
    filtered.dtype = source.dtype;
    for (const auto& [key, ws] : source)
        if (key_selected(opt, key)) filtered.insert(key, ws);

    std::filesystem::create_directories(opt.out_dir);
    json report = command_json(opt, "ablate");
    report["mode"] = mode;

    if (mode == "partial") {
        json sweeps = json::array();
        for (double q : opt.q_sweep) {
            progress("[ablate] partial q=" + format_q(q));
            std::vector<casa::AblationLayerStats> stats;
            const casa::WeightMap ablated =
                casa::partial_distilled(filtered, target, opt.config, q, &stats);
            const std::string name = "partial_q" + format_q(q) + ".safetensors";
            casa::save_checkpoint(ablated, opt.out_dir + "/" + name);
            double removed = 0.0, total_energy = 0.0;
            for (const auto& st : stats) {
                removed += st.masked_energy;
                total_energy += st.routing_energy;
            }
            sweeps.push_back(json{{"q", q},
                                  {"checkpoint", name},
                                  {"removed_energy", removed},
                                  {"total_routing_energy", total_energy},
                                  {"layers", casa::ablation_stats_to_json(stats)}});
        }
        report["sweep"] = std::move(sweeps);
    } else {
        casa::AblationSpec spec;
        spec.q_sweep = opt.q_sweep;
        spec.noise_mean = opt.noise_mean;
        spec.noise_var = opt.noise_var;
        spec.block_fraction = opt.block_fraction;
        spec.rng_seed = opt.seed;
        progress("[ablate] overactivate seed=" + std::to_string(spec.rng_seed));
        std::vector<casa::AblationLayerStats> stats;
        const casa::WeightMap perturbed =
            casa::overactivate_dominant_blocks(filtered, target, opt.config, spec, &stats);
        casa::save_checkpoint(perturbed, opt.out_dir + "/overactivated.safetensors");
        report["checkpoint"] = "overactivated.safetensors";
        report["noise_mean"] = spec.noise_mean;
        report["noise_var"] = spec.noise_var;
        report["block_fraction"] = spec.block_fraction;
        report["seed"] = spec.rng_seed;
        report["layers"] = casa::ablation_stats_to_json(stats);
    }
    write_report(opt.out_dir, report);
    return 0;
}

int fail_with_json(const std::string& kind, const std::string& message) {
    const json err{{"error", {{"kind", kind}, {"message", message}}}};
    std::cout << err.dump() << "\n";
    return 2;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Cluster-aware spectral arbitration for LoRA transfer"};
    app.require_subcommand(1);

    RunOptions opt;
    std::string manifest_path;
    std::string q_sweep_text;
    std::string residual_text;
    std::string population_text;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--manifest", manifest_path, "JSON manifest with paths and config");
        cmd->add_option("--source", opt.source_path, "source model checkpoint");
        cmd->add_option("--target", opt.target_path, "distilled model checkpoint");
        cmd->add_option("--lora", opt.lora_path, "LoRA adapter checkpoint");
        cmd->add_option("--out", opt.out_dir, "output directory");
        cmd->add_option("--energy-fraction", opt.config.energy_fraction,
                        "spectral energy captured by the top-k subspace");
        cmd->add_option("--tau", opt.config.tau, "rotation-graph edge threshold");
        cmd->add_option("--epsilon", opt.config.epsilon, "gap/cosine regularizer");
        cmd->add_option("--q-dom", opt.config.q_dom, "dominance quantile");
        cmd->add_option("--q-act", opt.config.q_act, "arbitration quantile");
        cmd->add_option("--out-rank", opt.config.out_rank,
                        "output adapter rank (0 keeps the input rank)");
        cmd->add_option("--residual", residual_text,
                        "off-subspace residual policy: passthrough|discard");
        cmd->add_option("--population", population_text,
                        "arbitration quantile population: positive-only|all");
        cmd->add_option("--mode", opt.mode, "command-specific mode");
        cmd->add_option("--q-sweep", q_sweep_text, "comma-separated dominance quantiles");
        cmd->add_option("--seed", opt.seed, "RNG seed");
        cmd->add_option("--jobs", opt.jobs, "worker threads (default: cores, or CASA_JOBS)");
        cmd->add_option("--include", opt.include, "glob of layer keys to process");
        cmd->add_option("--exclude", opt.exclude, "glob of layer keys to skip");
        return cmd;
    };

    CLI::App* analyze = add_common(app.add_subcommand(
        "analyze", "spectral rigidity and subspace similarity reports"));
    analyze->add_option("--sim-window", opt.sim_windows,
                        "index window start:end for similarity matrices (repeatable)");
    CLI::App* cluster = add_common(app.add_subcommand(
        "cluster", "cluster memberships, routing metrics and interference maps"));
    CLI::App* transfer = add_common(
        app.add_subcommand("transfer", "transfer a LoRA adapter onto a distilled model"));
    CLI::App* ablate = add_common(app.add_subcommand(
        "ablate", "partial-distilled construction / dominant-block over-activation"));
    ablate->add_option("--noise-mean", opt.noise_mean, "Gaussian perturbation mean");
    ablate->add_option("--noise-var", opt.noise_var, "Gaussian perturbation variance");
    ablate->add_option("--block-fraction", opt.block_fraction,
                       "fraction of cluster-pair blocks to perturb");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) return app.exit(e); // --help
        return fail_with_json("UsageError", e.what());
    }

    try {
        // Precedence: built-in defaults < manifest < explicit flags. The
        // manifest is applied first, then flags that were actually given
        // are re-applied on top.
        if (!manifest_path.empty()) {
            RunOptions manifest_opt;
            load_manifest(manifest_path, manifest_opt);
            CLI::App* active = app.get_subcommands().front();
            auto given = [&](const std::string& flag) {
                const CLI::Option* o = active->get_option_no_throw(flag);
                return o && o->count() > 0;
            };
            if (!given("--source") && !manifest_opt.source_path.empty())
                opt.source_path = manifest_opt.source_path;
            if (!given("--target") && !manifest_opt.target_path.empty())
                opt.target_path = manifest_opt.target_path;
            if (!given("--lora") && !manifest_opt.lora_path.empty())
                opt.lora_path = manifest_opt.lora_path;
            if (!given("--out") && !manifest_opt.out_dir.empty())
                opt.out_dir = manifest_opt.out_dir;
            if (!given("--mode") && !manifest_opt.mode.empty())
                opt.mode = manifest_opt.mode;
            if (!given("--seed")) opt.seed = manifest_opt.seed;
            if (!given("--jobs")) opt.jobs = manifest_opt.jobs;
            if (!given("--include")) opt.include = manifest_opt.include;
            if (!given("--exclude")) opt.exclude = manifest_opt.exclude;
            if (!given("--noise-mean")) opt.noise_mean = manifest_opt.noise_mean;
            if (!given("--noise-var")) opt.noise_var = manifest_opt.noise_var;
            if (!given("--block-fraction")) opt.block_fraction = manifest_opt.block_fraction;
            if (!given("--q-sweep") && q_sweep_text.empty())
                opt.q_sweep = manifest_opt.q_sweep;
            if (opt.sim_windows.empty()) opt.sim_windows = manifest_opt.sim_windows;
            casa::CasaConfig merged = manifest_opt.config;
            if (given("--energy-fraction")) merged.energy_fraction = opt.config.energy_fraction;
            if (given("--tau")) merged.tau = opt.config.tau;
            if (given("--epsilon")) merged.epsilon = opt.config.epsilon;
            if (given("--q-dom")) merged.q_dom = opt.config.q_dom;
            if (given("--q-act")) merged.q_act = opt.config.q_act;
            if (given("--out-rank")) merged.out_rank = opt.config.out_rank;
            opt.config = merged;
        }
        if (!residual_text.empty()) {
            if (residual_text == "passthrough")
                opt.config.residual = casa::ResidualPolicy::passthrough;
            else if (residual_text == "discard")
                opt.config.residual = casa::ResidualPolicy::discard;
            else throw casa::UsageError("--residual must be passthrough or discard");
        }
        if (!population_text.empty()) {
            if (population_text == "positive-only")
                opt.config.population = casa::QuantilePopulation::positive_only;
            else if (population_text == "all")
                opt.config.population = casa::QuantilePopulation::all;
            else throw casa::UsageError("--population must be positive-only or all");
        }
        if (!q_sweep_text.empty()) opt.q_sweep = parse_sweep(q_sweep_text);
        opt.config.validate();

        if (app.got_subcommand(analyze)) return cmd_analyze(opt);
        if (app.got_subcommand(cluster)) return cmd_cluster(opt);
        if (app.got_subcommand(transfer)) return cmd_transfer(opt);
        if (app.got_subcommand(ablate)) return cmd_ablate(opt);
        return fail_with_json("UsageError", "no subcommand");
    } catch (const casa::Error& e) {
        return fail_with_json(e.kind(), e.what());
    } catch (const std::exception& e) {
        return fail_with_json("InternalError", e.what());
    }
}
