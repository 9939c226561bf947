#include "mtlmm/commands.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "mtlmm/em.hpp"
#include "mtlmm/likelihood.hpp"
#include "mtlmm/parallel.hpp"
#include "mtlmm/rng.hpp"
#include "mtlmm/selection.hpp"
#include "mtlmm/simulate.hpp"

namespace mtlmm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const std::set<std::string> kTopKeys = {
    "seed", "threads", "output", "data", "penalty", "model", "em", "solver",
    "grid", "cv", "fit", "predict", "evaluate", "scenario", "replicate"};

template <typename T>
T get_or(const json& obj, const std::string& key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end()) return fallback;
    try {
        return it->get<T>();
    } catch (const json::exception&) {
        throw ValidationError("config key '" + key + "' has the wrong type");
    }
}

json section_or_empty(const RunConfig& config, const std::string& name) {
    const json* s = config.section(name);
    return s ? *s : json::object();
}

std::uint64_t resolve_seed(const RunConfig& config, const CommandOptions& opts) {
    if (opts.seed >= 0) return static_cast<std::uint64_t>(opts.seed);
    return get_or<std::uint64_t>(config.root, "seed", 1);
}

int resolve_thread_count(const RunConfig& config, const CommandOptions& opts) {
    if (opts.threads > 0) return opts.threads;
    return resolve_threads(get_or<int>(config.root, "threads", 0));
}

std::string resolve_out_dir(const RunConfig& config, const CommandOptions& opts) {
    if (!opts.out_dir.empty()) return opts.out_dir;
    const json out = section_or_empty(config, "output");
    require_keys(out, "output", {"dir"});
    return get_or<std::string>(out, "dir", "out");
}

void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw IoError("cannot create output directory '" + dir + "'");
}

std::string hex_hash(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

EmConfig parse_em(const RunConfig& config) {
    EmConfig cfg;
    const json em = section_or_empty(config, "em");
    require_keys(em, "em", {"epsilon", "max_iter", "trace"});
    cfg.epsilon = get_or<double>(em, "epsilon", 1e-6);
    cfg.max_iter = get_or<int>(em, "max_iter", 500);
    cfg.trace = get_or<bool>(em, "trace", false);
    const json solver = section_or_empty(config, "solver");
    require_keys(solver, "solver", {"max_sweeps", "tol", "active_set"});
    cfg.solver.max_sweeps = get_or<int>(solver, "max_sweeps", 1000);
    cfg.solver.tol = get_or<double>(solver, "tol", 1e-7);
    cfg.solver.active_set = get_or<bool>(solver, "active_set", true);
    return cfg;
}

ScenarioSpec parse_scenario(const RunConfig& config, std::uint64_t default_seed) {
    const json sc = section_or_empty(config, "scenario");
    require_keys(sc, "scenario",
                 {"name", "n", "groups", "p", "r", "q", "seed", "signal",
                  "nonzero_fraction", "signal_rows", "intercept_in_signal_block",
                  "psi_file", "sigma_file"});
    ScenarioSpec spec;
    const std::string name = get_or<std::string>(sc, "name", "row_wise_sparse");
    if (name == "row_wise_sparse") {
        spec.scenario = Scenario::RowWiseSparse;
    } else if (name == "sparse_at_random") {
        spec.scenario = Scenario::SparseAtRandom;
    } else {
        throw ValidationError("scenario.name must be row_wise_sparse or sparse_at_random");
    }
    spec.n_total = get_or<int>(sc, "n", 600);
    spec.n_groups = get_or<int>(sc, "groups", 10);
    spec.p = get_or<int>(sc, "p", 101);
    spec.r = get_or<int>(sc, "r", 5);
    spec.q = get_or<int>(sc, "q", 1);
    spec.seed = get_or<std::uint64_t>(sc, "seed", default_seed);
    spec.signal = get_or<double>(sc, "signal", 0.5);
    spec.nonzero_fraction = get_or<double>(sc, "nonzero_fraction", 0.7);
    spec.signal_rows = get_or<int>(sc, "signal_rows", 21);
    spec.intercept_in_signal_block = get_or<bool>(sc, "intercept_in_signal_block", true);
    const std::string psi_file = get_or<std::string>(sc, "psi_file", "");
    const std::string sigma_file = get_or<std::string>(sc, "sigma_file", "");
    if (!psi_file.empty()) spec.psi_true = read_matrix_csv(psi_file).values;
    if (!sigma_file.empty()) spec.sigma_true = read_matrix_csv(sigma_file).values;
    spec.apply_defaults();
    return spec;
}

struct DataSpec {
    std::string path;
    DatasetSchema schema;
    std::string split_file;
    std::string split;
};

DataSpec parse_data(const RunConfig& config) {
    const json* d = config.section("data");
    if (!d) throw ValidationError("config is missing the 'data' section");
    require_keys(*d, "data",
                 {"path", "group_column", "response_columns", "random_effect_columns",
                  "standardize", "split_file", "split"});
    DataSpec spec;
    spec.path = get_or<std::string>(*d, "path", "");
    if (spec.path.empty()) throw ValidationError("data.path is required");
    spec.schema.group_column = get_or<std::string>(*d, "group_column", "group");
    spec.schema.response_columns =
        get_or<std::vector<std::string>>(*d, "response_columns", {});
    spec.schema.random_effect_columns =
        get_or<std::vector<std::string>>(*d, "random_effect_columns", {});
    spec.schema.standardize = get_or<bool>(*d, "standardize", false);
    spec.split_file = get_or<std::string>(*d, "split_file", "");
    spec.split = get_or<std::string>(*d, "split", "");
    if (spec.split_file.empty() != spec.split.empty()) {
        throw ValidationError("data.split_file and data.split must be set together");
    }
    return spec;
}

std::set<int> split_rows(const std::string& split_file, const std::string& split) {
    const Table t = read_csv(split_file);
    const int row_col = t.column("row");
    const int split_col = t.column("split");
    if (row_col < 0 || split_col < 0) {
        throw ValidationError("split file needs 'row' and 'split' columns");
    }
    std::set<int> keep;
    for (const auto& row : t.rows) {
        if (row[split_col] == split) {
            keep.insert(static_cast<int>(parse_double(row[row_col])));
        }
    }
    if (keep.empty()) {
        throw ValidationError("split '" + split + "' selects no rows");
    }
    return keep;
}

Dataset load_dataset(const DataSpec& spec) {
    if (spec.split_file.empty()) {
        return read_dataset_csv(spec.path, spec.schema);
    }
    const std::set<int> keep = split_rows(spec.split_file, spec.split);
    return read_dataset_csv(spec.path, spec.schema, &keep);
}

PenaltySpec parse_penalty(const RunConfig& config, int p, int r) {
    const json pen = section_or_empty(config, "penalty");
    require_keys(pen, "penalty",
                 {"family", "lambda", "alpha", "lambda_x", "lambda_y", "gx_file", "gy_file"});
    const std::string family = get_or<std::string>(pen, "family", "elastic_net");
    const double lambda = get_or<double>(pen, "lambda", 0.0);
    if (family == "elastic_net") {
        return ElasticNetPenalty{lambda, get_or<double>(pen, "alpha", 0.5)};
    }
    if (family == "group_lasso") {
        return GroupLassoPenalty{lambda, get_or<double>(pen, "alpha", 0.5)};
    }
    if (family != "network_reg") {
        throw ValidationError("penalty.family must be elastic_net, group_lasso or network_reg");
    }
    NetworkRegPenalty net;
    net.lambda = lambda;
    net.lambda_x = get_or<double>(pen, "lambda_x", 0.0);
    net.lambda_y = get_or<double>(pen, "lambda_y", 0.0);
    const std::string gx = get_or<std::string>(pen, "gx_file", "");
    const std::string gy = get_or<std::string>(pen, "gy_file", "");
    net.g_x = gx.empty() ? Eigen::MatrixXd::Zero(p - 1, p - 1).eval()
                         : read_matrix_csv(gx).values;
    net.g_y = gy.empty() ? Eigen::MatrixXd::Zero(r, r).eval() : read_matrix_csv(gy).values;
    return net;
}

bool parse_mixed(const RunConfig& config) {
    const json model = section_or_empty(config, "model");
    require_keys(model, "model", {"type"});
    const std::string type = get_or<std::string>(model, "type", "random");
    if (type == "random") return true;
    if (type == "fixed") return false;
    throw ValidationError("model.type must be 'random' or 'fixed'");
}

std::vector<std::string> component_names(const std::vector<std::string>& responses, int q) {
    std::vector<std::string> names;
    for (const auto& resp : responses) {
        for (int a = 0; a < q; ++a) {
            names.push_back(q == 1 ? resp : resp + ":re" + std::to_string(a + 1));
        }
    }
    return names;
}

std::vector<std::string> default_names(const std::string& prefix, int count) {
    std::vector<std::string> names;
    for (int i = 1; i <= count; ++i) names.push_back(prefix + std::to_string(i));
    return names;
}

void write_params(const std::string& dir, const ModelParams& params,
                  const std::vector<std::string>& predictor_names,
                  const std::vector<std::string>& response_names, int q) {
    LabeledMatrix b;
    b.values = params.B;
    b.col_names = response_names;
    b.row_labels = predictor_names;
    b.label_header = "predictor";
    write_matrix_csv(dir + "/B_hat.csv", b);

    LabeledMatrix sigma;
    sigma.values = params.Sigma;
    sigma.col_names = response_names;
    sigma.row_labels = response_names;
    sigma.label_header = "response";
    write_matrix_csv(dir + "/Sigma_hat.csv", sigma);

    LabeledMatrix psi;
    psi.values = params.Psi;
    psi.col_names = component_names(response_names, q);
    psi.row_labels = psi.col_names;
    psi.label_header = "component";
    write_matrix_csv(dir + "/Psi_hat.csv", psi);
}

void write_blups(const std::string& path, const RandomEffects& blups,
                 const std::vector<std::string>& response_names, int q) {
    LabeledMatrix m;
    m.label_header = "group";
    m.col_names = component_names(response_names, q);
    m.row_labels = blups.labels;
    m.values.resize(static_cast<Eigen::Index>(blups.lambda.size()),
                    static_cast<Eigen::Index>(m.col_names.size()));
    for (std::size_t j = 0; j < blups.lambda.size(); ++j) {
        const auto& lam = blups.lambda[j];
        m.values.row(static_cast<Eigen::Index>(j)) =
            Eigen::Map<const Eigen::VectorXd>(lam.data(), lam.size()).transpose();
    }
    write_matrix_csv(path, m);
}

void write_trace(const std::string& dir, const std::vector<TraceRecord>& trace) {
    Table t;
    t.header = {"iteration", "loglik_pen", "penalty_B", "penalty_B_tilde", "d0",
                "max_delta_B"};
    for (const auto& rec : trace) {
        t.rows.push_back({std::to_string(rec.iteration), format_double(rec.loglik_pen),
                          format_double(rec.penalty_B), format_double(rec.penalty_B_tilde),
                          std::to_string(rec.d0), format_double(rec.max_delta_B)});
    }
    write_csv(dir + "/trace.csv", t);
}

json penalty_to_json(const PenaltySpec& spec) {
    json j;
    j["family"] = penalty_family_name(spec);
    j["lambda"] = penalty_lambda(spec);
    if (const auto* en = std::get_if<ElasticNetPenalty>(&spec)) {
        j["alpha"] = en->alpha;
    } else if (const auto* gl = std::get_if<GroupLassoPenalty>(&spec)) {
        j["alpha"] = gl->alpha;
    } else {
        const auto& net = std::get<NetworkRegPenalty>(spec);
        j["lambda_x"] = net.lambda_x;
        j["lambda_y"] = net.lambda_y;
    }
    return j;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out << j.dump(2) << '\n';
    if (!out) throw IoError("write to '" + path + "' failed");
}

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ValidationError("'" + path + "' is not valid JSON: " + e.what());
    }
    return j;
}

}  // namespace

int cmd_simulate(const RunConfig& config, const CommandOptions& opts) {
    require_keys(config.root, "config", kTopKeys);
    const std::string dir = resolve_out_dir(config, opts);
    ensure_dir(dir);
    ScenarioSpec spec = parse_scenario(config, resolve_seed(config, opts));
    if (opts.seed >= 0) spec.seed = static_cast<std::uint64_t>(opts.seed);

    const SimulatedDataset sim = generate(spec);
    const auto response_names = default_names("y", spec.r);
    std::vector<std::string> predictor_names = {"(Intercept)"};
    for (int i = 1; i < spec.p; ++i) predictor_names.push_back("x" + std::to_string(i));

    write_dataset_csv(dir + "/dataset.csv", sim.data, response_names, predictor_names);

    LabeledMatrix b;
    b.values = sim.B_true;
    b.col_names = response_names;
    b.row_labels = predictor_names;
    b.label_header = "predictor";
    write_matrix_csv(dir + "/B_true.csv", b);

    LabeledMatrix psi;
    psi.values = sim.psi_used;
    psi.col_names = component_names(response_names, spec.q);
    psi.row_labels = psi.col_names;
    psi.label_header = "component";
    write_matrix_csv(dir + "/Psi_true.csv", psi);

    LabeledMatrix sigma;
    sigma.values = spec.sigma_true;
    sigma.col_names = response_names;
    sigma.row_labels = response_names;
    sigma.label_header = "response";
    write_matrix_csv(dir + "/Sigma_true.csv", sigma);

    write_blups(dir + "/Lambda_true.csv", sim.lambda_true, response_names, spec.q);

    Table splits;
    splits.header = {"row", "split"};
    auto add_split = [&](const std::vector<int>& rows, const char* name) {
        for (int ridx : rows) splits.rows.push_back({std::to_string(ridx), name});
    };
    add_split(sim.split.train, "train");
    add_split(sim.split.validation, "validation");
    add_split(sim.split.test, "test");
    std::sort(splits.rows.begin(), splits.rows.end(),
              [](const auto& a, const auto& b) { return std::stoi(a[0]) < std::stoi(b[0]); });
    write_csv(dir + "/splits.csv", splits);

    json meta;
    meta["command"] = "simulate";
    meta["scenario"] = spec.scenario == Scenario::RowWiseSparse ? "row_wise_sparse"
                                                                : "sparse_at_random";
    meta["seed"] = spec.seed;
    meta["n"] = spec.n_total;
    meta["groups"] = spec.n_groups;
    meta["p"] = spec.p;
    meta["r"] = spec.r;
    meta["q"] = spec.q;
    meta["psi_projected"] = sim.psi_projected;
    meta["dataset_file"] = "dataset.csv";
    meta["split_file"] = "splits.csv";
    meta["b_true_file"] = "B_true.csv";
    meta["psi_true_file"] = "Psi_true.csv";
    meta["sigma_true_file"] = "Sigma_true.csv";
    meta["lambda_true_file"] = "Lambda_true.csv";
    meta["config_hash"] = hex_hash(config.hash());
    write_json(dir + "/metadata.json", meta);

    if (!opts.quiet) {
        std::fprintf(stderr, "simulate: wrote %d rows, %d groups to %s\n", spec.n_total,
                     spec.n_groups, dir.c_str());
    }
    return kExitOk;
}

namespace {

struct FitArtifacts {
    FitResult result;
    Dataset dataset;
    bool mixed = true;
};

FitArtifacts run_fit(const RunConfig& config, const CommandOptions& opts) {
    const DataSpec data_spec = parse_data(config);
    FitArtifacts art;
    art.dataset = load_dataset(data_spec);
    const auto& dims = art.dataset.grouped.dims;
    const PenaltySpec spec = parse_penalty(config, dims.p, dims.r);
    const EmConfig cfg = parse_em(config);
    art.mixed = parse_mixed(config);

    const json fit_section = section_or_empty(config, "fit");
    require_keys(fit_section, "fit", {"warm_start_dir"});
    const std::string warm_dir = get_or<std::string>(fit_section, "warm_start_dir", "");

    if (!art.mixed) {
        art.result = fit_fixed_effects(art.dataset.grouped, spec, cfg);
    } else if (!warm_dir.empty()) {
        ModelParams init;
        init.B = read_matrix_csv(warm_dir + "/B_hat.csv").values;
        init.Sigma = read_matrix_csv(warm_dir + "/Sigma_hat.csv").values;
        init.Psi = read_matrix_csv(warm_dir + "/Psi_hat.csv").values;
        art.result = fit(art.dataset.grouped, spec, cfg, &init);
    } else {
        art.result = fit(art.dataset.grouped, spec, cfg);
    }
    (void)opts;
    return art;
}

json fit_summary(const RunConfig& config, const FitArtifacts& art) {
    const auto& dims = art.dataset.grouped.dims;
    json s;
    s["command"] = "fit";
    s["config_hash"] = hex_hash(config.hash());
    s["model_type"] = art.mixed ? "random" : "fixed";
    s["penalty"] = penalty_to_json(art.result.penalty);
    s["converged"] = art.result.converged;
    s["iterations"] = art.result.iterations;
    s["d0"] = art.result.d0;
    const double ll = marginal_loglik(art.dataset.grouped, art.result.params);
    s["loglik"] = ll;
    s["loglik_pen"] = art.result.objective_trace.back();
    s["bic"] = 2.0 * ll - static_cast<double>(art.result.d0) *
                              std::log(static_cast<double>(dims.total_rows()));
    const Eigen::VectorXd pv = pvre(art.result.params);
    s["pvre"] = std::vector<double>(pv.data(), pv.data() + pv.size());
    const json* d = config.section("data");
    s["group_column"] = get_or<std::string>(*d, "group_column", "group");
    s["response_columns"] = art.dataset.response_names;
    s["random_effect_columns"] =
        get_or<std::vector<std::string>>(*d, "random_effect_columns", {});
    s["standardize"] = get_or<bool>(*d, "standardize", false);
    if (s["standardize"].get<bool>()) {
        s["predictor_scale"] = std::vector<double>(
            art.dataset.predictor_scale.data(),
            art.dataset.predictor_scale.data() + art.dataset.predictor_scale.size());
    }
    return s;
}

void write_fit_outputs(const std::string& dir, const RunConfig& config,
                       const FitArtifacts& art) {
    const auto& dims = art.dataset.grouped.dims;
    write_params(dir, art.result.params, art.dataset.predictor_names,
                 art.dataset.response_names, dims.q);
    write_blups(dir + "/blups.csv", art.result.blups, art.dataset.response_names, dims.q);
    write_trace(dir, art.result.trace);
    write_json(dir + "/summary.json", fit_summary(config, art));
}

}  // namespace

int cmd_fit(const RunConfig& config, const CommandOptions& opts) {
    require_keys(config.root, "config", kTopKeys);
    const std::string dir = resolve_out_dir(config, opts);
    ensure_dir(dir);
    FitArtifacts art = run_fit(config, opts);
    write_fit_outputs(dir, config, art);
    if (!opts.quiet) {
        std::fprintf(stderr, "fit: %s after %d iterations (d0 = %ld)\n",
                     art.result.converged ? "converged" : "max_iter reached",
                     art.result.iterations, art.result.d0);
    }
    return art.result.converged ? kExitOk : kExitNonConvergence;
}

int cmd_cv(const RunConfig& config, const CommandOptions& opts) {
    require_keys(config.root, "config", kTopKeys);
    const std::string dir = resolve_out_dir(config, opts);
    ensure_dir(dir);

    const DataSpec data_spec = parse_data(config);
    Dataset dataset = load_dataset(data_spec);
    const auto& dims = dataset.grouped.dims;
    const PenaltySpec family = parse_penalty(config, dims.p, dims.r);
    const EmConfig cfg = parse_em(config);
    const bool mixed = parse_mixed(config);

    const json grid_section = section_or_empty(config, "grid");
    require_keys(grid_section, "grid", {"values", "count", "min_ratio", "lambda_x", "lambda_y"});
    LambdaGrid grid;
    grid.values = get_or<std::vector<double>>(grid_section, "values", {});
    if (grid.values.empty()) {
        const double lmax =
            lambda_max(dataset.grouped.stacked_X(), dataset.grouped.stacked_Y(), family);
        grid = LambdaGrid::log_spaced(lmax, get_or<int>(grid_section, "count", 50),
                                      get_or<double>(grid_section, "min_ratio", 1e-3));
    }
    grid.lambda_x = get_or<std::vector<double>>(grid_section, "lambda_x", {});
    grid.lambda_y = get_or<std::vector<double>>(grid_section, "lambda_y", {});
    grid.validate();

    const json cv_section = section_or_empty(config, "cv");
    require_keys(cv_section, "cv", {"k", "seed", "criterion", "per_response"});
    const int k = get_or<int>(cv_section, "k", 10);
    const std::uint64_t cv_seed = get_or<std::uint64_t>(cv_section, "seed",
                                                        resolve_seed(config, opts));
    const std::string criterion = get_or<std::string>(cv_section, "criterion", "rmse");
    const bool per_response = get_or<bool>(cv_section, "per_response", false);

    json chosen;
    chosen["command"] = "cv";
    chosen["config_hash"] = hex_hash(config.hash());
    chosen["criterion"] = criterion;
    PenaltySpec refit_spec = family;

    if (criterion == "rmse") {
        const CvResult cv = kfold_cv(dataset.grouped, family, grid, k, cv_seed, cfg, mixed);
        Table t;
        t.header = {"lambda", "lambda_x", "lambda_y"};
        for (const auto& name : dataset.response_names) t.header.push_back("rmse_" + name);
        t.header.push_back("pooled_rmse");
        t.header.push_back("fold_sd");
        for (const auto& pt : cv.curve) {
            std::vector<std::string> row = {format_double(pt.lambda),
                                            format_double(pt.lambda_x),
                                            format_double(pt.lambda_y)};
            for (Eigen::Index c = 0; c < pt.rmse_per_response.size(); ++c) {
                row.push_back(format_double(pt.rmse_per_response[c]));
            }
            row.push_back(format_double(pt.pooled_rmse));
            row.push_back(format_double(pt.fold_sd));
            t.rows.push_back(std::move(row));
        }
        write_csv(dir + "/cv_table.csv", t);
        chosen["chosen_lambda"] = cv.chosen_lambda;
        chosen["one_se_lambda"] = cv.one_se_lambda;
        chosen["seed"] = cv.seed;
        chosen["k"] = k;
        if (per_response) {
            // Per-response minimizers of the CV curves, for reporting; the
            // refit still uses the pooled choice.
            std::vector<double> best(dataset.response_names.size(), 0.0);
            std::vector<double> best_rmse(dataset.response_names.size(),
                                          std::numeric_limits<double>::infinity());
            for (const auto& pt : cv.curve) {
                for (std::size_t c = 0; c < best.size(); ++c) {
                    if (pt.rmse_per_response[static_cast<Eigen::Index>(c)] < best_rmse[c]) {
                        best_rmse[c] = pt.rmse_per_response[static_cast<Eigen::Index>(c)];
                        best[c] = pt.lambda;
                    }
                }
            }
            chosen["per_response_lambda"] = best;
        }
        refit_spec = with_lambda(family, cv.chosen_lambda);
        if (auto* net = std::get_if<NetworkRegPenalty>(&refit_spec)) {
            net->lambda_x = cv.chosen_lambda_x;
            net->lambda_y = cv.chosen_lambda_y;
            chosen["chosen_lambda_x"] = cv.chosen_lambda_x;
            chosen["chosen_lambda_y"] = cv.chosen_lambda_y;
        }
    } else if (criterion == "bic") {
        // Full-data path, warm-started; keep the BIC maximizer.
        Table t;
        t.header = {"lambda", "bic", "d0"};
        double best_bic = -std::numeric_limits<double>::infinity();
        double best_lambda = grid.values.front();
        const ModelParams* warm = nullptr;
        ModelParams warm_store;
        for (double lambda : grid.values) {
            const PenaltySpec spec = with_lambda(family, lambda);
            FitResult fr = mixed ? fit(dataset.grouped, spec, cfg, warm)
                                 : fit_fixed_effects(dataset.grouped, spec, cfg);
            const double bic = modified_bic(fr, dataset.grouped);
            t.rows.push_back({format_double(lambda), format_double(bic),
                              std::to_string(fr.d0)});
            if (bic > best_bic) {
                best_bic = bic;
                best_lambda = lambda;
            }
            warm_store = fr.params;
            warm = mixed ? &warm_store : nullptr;
        }
        write_csv(dir + "/bic_table.csv", t);
        chosen["chosen_lambda"] = best_lambda;
        refit_spec = with_lambda(family, best_lambda);
    } else {
        throw ValidationError("cv.criterion must be 'rmse' or 'bic'");
    }
    write_json(dir + "/chosen.json", chosen);

    FitArtifacts art;
    art.dataset = std::move(dataset);
    art.mixed = mixed;
    art.result = mixed ? fit(art.dataset.grouped, refit_spec, cfg)
                       : fit_fixed_effects(art.dataset.grouped, refit_spec, cfg);
    write_fit_outputs(dir, config, art);
    if (!opts.quiet) {
        std::fprintf(stderr, "cv: chose lambda %s\n",
                     format_double(penalty_lambda(refit_spec)).c_str());
    }
    return art.result.converged ? kExitOk : kExitNonConvergence;
}

int cmd_predict(const RunConfig& config, const CommandOptions& opts) {
    require_keys(config.root, "config", kTopKeys);
    const std::string dir = resolve_out_dir(config, opts);
    ensure_dir(dir);

    const json* sec = config.section("predict");
    if (!sec) throw ValidationError("config is missing the 'predict' section");
    require_keys(*sec, "predict", {"fit_dir", "data", "group_column"});
    const std::string fit_dir = get_or<std::string>(*sec, "fit_dir", "");
    const std::string data_path = get_or<std::string>(*sec, "data", "");
    if (fit_dir.empty() || data_path.empty()) {
        throw ValidationError("predict.fit_dir and predict.data are required");
    }

    const json summary = load_json(fit_dir + "/summary.json");
    const LabeledMatrix b = read_matrix_csv(fit_dir + "/B_hat.csv");
    const LabeledMatrix blups_m = read_matrix_csv(fit_dir + "/blups.csv");
    const bool mixed = summary.value("model_type", "random") == "random";
    const std::vector<std::string> re_columns =
        summary.value("random_effect_columns", std::vector<std::string>{});
    const bool standardize = summary.value("standardize", false);
    std::vector<double> scale = summary.value("predictor_scale", std::vector<double>{});

    std::string group_column = get_or<std::string>(*sec, "group_column", "");
    if (group_column.empty()) group_column = summary.value("group_column", "group");

    const Table t = read_csv(data_path);
    // Fit predictors (beyond the intercept) must be present by name.
    std::vector<int> pred_cols;
    std::vector<std::string> missing;
    for (std::size_t i = 1; i < b.row_labels.size(); ++i) {
        const int c = t.column(b.row_labels[i]);
        if (c < 0) {
            missing.push_back(b.row_labels[i]);
        } else {
            pred_cols.push_back(c);
        }
    }
    if (!missing.empty()) {
        std::string msg = "new data is missing fit predictor columns:";
        for (const auto& name : missing) msg += " '" + name + "'";
        throw ValidationError(msg);
    }
    std::vector<int> re_cols;
    const int group_col = t.column(group_column);
    if (mixed && group_col >= 0) {
        for (const auto& name : re_columns) {
            const int c = t.column(name);
            if (c < 0) {
                throw ValidationError("new data is missing random-effect column '" + name +
                                      "'");
            }
            re_cols.push_back(c);
        }
    }

    const Eigen::Index p = b.values.rows();
    const Eigen::Index r = b.values.cols();
    Table out;
    out.header = {"row"};
    if (group_col >= 0) out.header.push_back("group");
    for (const auto& name : b.col_names) out.header.push_back(name);
    out.header.push_back("population_level");

    for (std::size_t i = 0; i < t.rows.size(); ++i) {
        Eigen::RowVectorXd x(p);
        x[0] = 1.0;
        for (std::size_t c = 0; c < pred_cols.size(); ++c) {
            double v = parse_double(t.rows[i][pred_cols[c]]);
            if (standardize && c + 1 < scale.size()) v /= scale[c + 1];
            x[static_cast<Eigen::Index>(c + 1)] = v;
        }
        Eigen::RowVectorXd pred = x * b.values;
        bool population = true;
        if (mixed && group_col >= 0) {
            const std::string& label = t.rows[i][group_col];
            for (std::size_t g = 0; g < blups_m.row_labels.size(); ++g) {
                if (blups_m.row_labels[g] != label) continue;
                const int q = re_cols.empty() ? 1 : static_cast<int>(re_cols.size());
                Eigen::RowVectorXd z(q);
                if (re_cols.empty()) {
                    z[0] = 1.0;
                } else {
                    for (std::size_t c = 0; c < re_cols.size(); ++c) {
                        z[static_cast<Eigen::Index>(c)] = parse_double(t.rows[i][re_cols[c]]);
                    }
                }
                const Eigen::VectorXd lam_vec =
                    blups_m.values.row(static_cast<Eigen::Index>(g)).transpose();
                const Eigen::Map<const Eigen::MatrixXd> lam(lam_vec.data(), q, r);
                pred += z * lam;
                population = false;
                break;
            }
        }
        std::vector<std::string> row = {std::to_string(i + 1)};
        if (group_col >= 0) row.push_back(t.rows[i][group_col]);
        for (Eigen::Index c = 0; c < r; ++c) row.push_back(format_double(pred[c]));
        row.push_back(population ? "1" : "0");
        out.rows.push_back(std::move(row));
    }
    write_csv(dir + "/predictions.csv", out);
    json meta;
    meta["command"] = "predict";
    meta["config_hash"] = hex_hash(config.hash());
    meta["rows"] = t.rows.size();
    write_json(dir + "/metadata.json", meta);
    if (!opts.quiet) {
        std::fprintf(stderr, "predict: wrote %zu rows\n", t.rows.size());
    }
    return kExitOk;
}

int cmd_evaluate(const RunConfig& config, const CommandOptions& opts) {
    require_keys(config.root, "config", kTopKeys);
    const std::string dir = resolve_out_dir(config, opts);
    ensure_dir(dir);

    const json* sec = config.section("evaluate");
    if (!sec) throw ValidationError("config is missing the 'evaluate' section");
    require_keys(*sec, "evaluate",
                 {"fit_dir", "test_data", "b_true", "psi_true", "sigma_true", "split_file",
                  "split"});
    const std::string fit_dir = get_or<std::string>(*sec, "fit_dir", "");
    if (fit_dir.empty()) throw ValidationError("evaluate.fit_dir is required");

    const json summary = load_json(fit_dir + "/summary.json");
    ModelParams params;
    const LabeledMatrix b = read_matrix_csv(fit_dir + "/B_hat.csv");
    params.B = b.values;
    params.Sigma = read_matrix_csv(fit_dir + "/Sigma_hat.csv").values;
    params.Psi = read_matrix_csv(fit_dir + "/Psi_hat.csv").values;
    const LabeledMatrix blups_m = read_matrix_csv(fit_dir + "/blups.csv");
    const bool mixed = summary.value("model_type", "random") == "random";
    const int r = static_cast<int>(params.Sigma.rows());
    const int q = static_cast<int>(params.Psi.rows()) / std::max(r, 1);

    RandomEffects blups;
    blups.labels = blups_m.row_labels;
    for (Eigen::Index g = 0; g < blups_m.values.rows(); ++g) {
        const Eigen::VectorXd lam_vec = blups_m.values.row(g).transpose();
        blups.lambda.push_back(Eigen::Map<const Eigen::MatrixXd>(lam_vec.data(), q, r));
    }

    Table metrics;
    metrics.header = {"metric", "response", "value", "note"};
    auto add = [&](const std::string& metric, const std::string& response, double value,
                   const std::string& note = "") {
        metrics.rows.push_back({metric, response,
                                std::isnan(value) ? "NA" : format_double(value), note});
    };
    auto omit = [&](const std::string& metric, const std::string& why) {
        metrics.rows.push_back({metric, "all", "NA", why});
    };

    const std::string test_path = get_or<std::string>(*sec, "test_data", "");
    if (!test_path.empty()) {
        DatasetSchema schema;
        schema.group_column = summary.value("group_column", "group");
        schema.response_columns = summary.value("response_columns", std::vector<std::string>{});
        schema.random_effect_columns =
            summary.value("random_effect_columns", std::vector<std::string>{});
        const std::string split_file = get_or<std::string>(*sec, "split_file", "");
        const std::string split = get_or<std::string>(*sec, "split", "");
        Dataset test;
        if (!split_file.empty()) {
            const std::set<int> keep = split_rows(split_file, split);
            test = read_dataset_csv(test_path, schema, &keep);
        } else {
            test = read_dataset_csv(test_path, schema);
        }
        if (summary.value("standardize", false)) {
            const std::vector<double> scale =
                summary.value("predictor_scale", std::vector<double>{});
            for (auto& gblock : test.grouped.groups) {
                for (std::size_t c = 1; c < scale.size(); ++c) {
                    gblock.X.col(static_cast<Eigen::Index>(c)) /= scale[c];
                }
            }
        }
        const Eigen::MatrixXd pred =
            predict_grouped(test.grouped, params, mixed ? &blups : nullptr);
        const Eigen::VectorXd err = rmse(test.grouped.stacked_Y(), pred);
        for (int c = 0; c < r; ++c) add("rmse", test.response_names[c], err[c]);
        add("rmse_pooled", "all", err.mean());
    } else {
        omit("rmse", "no test data supplied");
    }

    const std::string b_true_path = get_or<std::string>(*sec, "b_true", "");
    if (!b_true_path.empty()) {
        const Eigen::MatrixXd b_true = read_matrix_csv(b_true_path).values;
        add("frobenius_B", "all", frobenius_distance(b_true, params.B));
        const auto roc = support_roc(b_true, {{0.0, params.B}});
        add("sensitivity", "all", roc.front().sensitivity);
        add("specificity", "all", roc.front().specificity);
    } else {
        omit("frobenius_B", "no B truth supplied");
    }

    const std::string psi_true_path = get_or<std::string>(*sec, "psi_true", "");
    const std::string sigma_true_path = get_or<std::string>(*sec, "sigma_true", "");
    if (!psi_true_path.empty()) {
        const Eigen::MatrixXd psi_true = read_matrix_csv(psi_true_path).values;
        add("frobenius_Psi", "all", frobenius_distance(psi_true, params.Psi));
        if (!sigma_true_path.empty()) {
            const Eigen::MatrixXd sigma_true = read_matrix_csv(sigma_true_path).values;
            const Eigen::VectorXd pv_true = pvre(psi_true, sigma_true);
            for (int c = 0; c < r; ++c) {
                add("pvre_true", b.col_names[c], pv_true[c]);
            }
        }
    } else {
        omit("frobenius_Psi", "no Psi truth supplied");
    }

    const Eigen::VectorXd pv = pvre(params.Psi, params.Sigma);
    for (int c = 0; c < r; ++c) add("pvre", b.col_names[c], pv[c]);
    const ActiveCounts counts = active_feature_count(params.B);
    add("active_joint", "all", counts.joint_rows);
    for (int c = 0; c < r; ++c) add("active", b.col_names[c], counts.per_response[c]);
    if (summary.contains("bic")) add("bic", "all", summary["bic"].get<double>());
    if (summary.contains("d0")) add("d0", "all", summary["d0"].get<double>());

    write_csv(dir + "/metrics.csv", metrics);
    json meta;
    meta["command"] = "evaluate";
    meta["config_hash"] = hex_hash(config.hash());
    write_json(dir + "/metadata.json", meta);
    if (!opts.quiet) std::fprintf(stderr, "evaluate: wrote metrics.csv\n");
    return kExitOk;
}

namespace {

// One §-style experiment configuration: penalty family x model type.
struct ReplicateModel {
    std::string family;  // elastic_net | group_lasso | network_reg
    bool mixed = false;
};

struct ReplicateSettings {
    int repetitions = 10;
    int grid_count = 30;
    double grid_min_ratio = 5e-3;
    int roc_grid_count = 30;          // support-recovery path, traced separately
    double roc_grid_min_ratio = 0.02;  // span of the support transition
    double alpha = 0.5;
    double adjacency_threshold = 0.1;
    bool binary_adjacency = false;
    std::vector<double> net_lambda_x = {0.001, 0.01, 0.1};
    std::vector<double> net_lambda_y = {0.001, 0.01, 0.1};
    int net_cv_folds = 5;
};

ReplicateSettings parse_replicate(const RunConfig& config) {
    const json rep = section_or_empty(config, "replicate");
    require_keys(rep, "replicate",
                 {"repetitions", "grid_count", "grid_min_ratio", "roc_grid_count",
                  "roc_grid_min_ratio", "alpha", "adjacency_threshold",
                  "binary_adjacency", "netreg_lambda_x", "netreg_lambda_y",
                  "netreg_cv_folds"});
    ReplicateSettings s;
    s.repetitions = get_or<int>(rep, "repetitions", 10);
    s.grid_count = get_or<int>(rep, "grid_count", 30);
    s.grid_min_ratio = get_or<double>(rep, "grid_min_ratio", 5e-3);
    s.roc_grid_count = get_or<int>(rep, "roc_grid_count", 30);
    s.roc_grid_min_ratio = get_or<double>(rep, "roc_grid_min_ratio", 0.02);
    s.alpha = get_or<double>(rep, "alpha", 0.5);
    s.adjacency_threshold = get_or<double>(rep, "adjacency_threshold", 0.1);
    s.binary_adjacency = get_or<bool>(rep, "binary_adjacency", false);
    s.net_lambda_x = get_or<std::vector<double>>(rep, "netreg_lambda_x", {0.001, 0.01, 0.1});
    s.net_lambda_y = get_or<std::vector<double>>(rep, "netreg_lambda_y", {0.001, 0.01, 0.1});
    s.net_cv_folds = get_or<int>(rep, "netreg_cv_folds", 5);
    if (s.repetitions < 1) throw ValidationError("replicate.repetitions must be >= 1");
    return s;
}

struct MetricRow {
    std::string model;
    std::string penalty;
    std::string metric;
    std::string response;
    double value;
};

std::vector<MetricRow> run_replication(const ScenarioSpec& base, std::uint64_t master_seed,
                                       int rep_index, const ReplicateSettings& s,
                                       const EmConfig& cfg,
                                       const std::vector<std::string>& response_names) {
    ScenarioSpec spec = base;
    spec.seed = splitmix64(splitmix64(master_seed) ^ splitmix64(0x5eedULL + rep_index));
    const SimulatedDataset sim = generate(spec);
    const GroupedDataset train = subset_rows(sim.data, sim.split.train);
    const GroupedDataset validation = subset_rows(sim.data, sim.split.validation);
    const GroupedDataset test = subset_rows(sim.data, sim.split.test);

    const Eigen::MatrixXd train_x = train.stacked_X();
    const Eigen::MatrixXd train_y = train.stacked_Y();
    const Eigen::MatrixXd g_x = adjacency_from_correlation(
        train_x.rightCols(train_x.cols() - 1), s.adjacency_threshold, s.binary_adjacency);
    const Eigen::MatrixXd g_y =
        adjacency_from_correlation(train_y, s.adjacency_threshold, s.binary_adjacency);

    std::vector<MetricRow> rows;
    auto add = [&](const std::string& model, const std::string& penalty,
                   const std::string& metric, const std::string& response, double value) {
        rows.push_back({model, penalty, metric, response, value});
    };

    const std::vector<ReplicateModel> models = {
        {"elastic_net", false}, {"group_lasso", false}, {"network_reg", false},
        {"elastic_net", true},  {"group_lasso", true},  {"network_reg", true},
    };
    for (const auto& model : models) {
        PenaltySpec family;
        if (model.family == "elastic_net") {
            family = ElasticNetPenalty{1.0, s.alpha};
        } else if (model.family == "group_lasso") {
            family = GroupLassoPenalty{1.0, s.alpha};
        } else {
            NetworkRegPenalty net;
            net.lambda = 1.0;
            net.lambda_x = s.net_lambda_x.front();
            net.lambda_y = s.net_lambda_y.front();
            net.g_x = g_x;
            net.g_y = g_y;
            family = net;
        }

        const double lmax = lambda_max(train_x, train_y, family);
        const LambdaGrid grid = LambdaGrid::log_spaced(lmax, s.grid_count, s.grid_min_ratio);

        if (model.family == "network_reg" &&
            (s.net_lambda_x.size() > 1 || s.net_lambda_y.size() > 1)) {
            // Auxiliary tuning by k-fold CV on the training set, over a
            // thinned lambda path to keep the pair search affordable.
            LambdaGrid aux;
            for (std::size_t i = 0; i < grid.values.size(); i += 3) {
                aux.values.push_back(grid.values[i]);
            }
            aux.lambda_x = s.net_lambda_x;
            aux.lambda_y = s.net_lambda_y;
            const CvResult cv = kfold_cv(train, family, aux, s.net_cv_folds, spec.seed,
                                         cfg, model.mixed);
            auto& net = std::get<NetworkRegPenalty>(family);
            net.lambda_x = cv.chosen_lambda_x;
            net.lambda_y = cv.chosen_lambda_y;
        }

        const HoldoutResult sel =
            holdout_select(train, validation, family, grid.values, cfg, model.mixed);
        const FitResult& best = sel.fits[sel.chosen_index];
        const std::string model_name = model.mixed ? "random" : "fixed";

        const Eigen::MatrixXd pred =
            predict_grouped(test, best.params, model.mixed ? &best.blups : nullptr);
        const Eigen::VectorXd err = rmse(test.stacked_Y(), pred);
        for (int c = 0; c < spec.r; ++c) {
            add(model_name, model.family, "rmse", response_names[c], err[c]);
        }
        add(model_name, model.family, "frobenius_B", "all",
            frobenius_distance(sim.B_true, best.params.B));
        if (model.mixed) {
            add(model_name, model.family, "frobenius_Psi", "all",
                frobenius_distance(sim.psi_used, best.params.Psi));
            const Eigen::VectorXd pv = pvre(best.params);
            for (int c = 0; c < spec.r; ++c) {
                add(model_name, model.family, "pvre", response_names[c], pv[c]);
                add(model_name, model.family, "psi_diag", response_names[c],
                    best.params.Psi(c * spec.q, c * spec.q));
            }
        }

        std::vector<std::pair<double, Eigen::MatrixXd>> path;
        path.reserve(sel.fits.size());
        for (std::size_t i = 0; i < sel.fits.size(); ++i) {
            path.emplace_back(sel.curve[i].lambda, sel.fits[i].params.B);
        }
        const auto roc_at_chosen = support_roc(sim.B_true, path);
        add(model_name, model.family, "sensitivity", "all",
            roc_at_chosen[sel.chosen_index].sensitivity);
        add(model_name, model.family, "specificity", "all",
            roc_at_chosen[sel.chosen_index].specificity);

        // Support-recovery curve on its own path, spanning the transition
        // from the all-zero to the dense end.
        const LambdaGrid roc_grid =
            LambdaGrid::log_spaced(lmax, s.roc_grid_count, s.roc_grid_min_ratio);
        std::vector<std::pair<double, Eigen::MatrixXd>> roc_path;
        roc_path.reserve(roc_grid.values.size());
        ModelParams roc_warm;
        bool have_roc_warm = false;
        for (double lambda : roc_grid.values) {
            const PenaltySpec spec_l = with_lambda(family, lambda);
            FitResult fr = model.mixed
                               ? fit(train, spec_l, cfg, have_roc_warm ? &roc_warm : nullptr)
                               : fit_fixed_effects(train, spec_l, cfg);
            roc_warm = fr.params;
            have_roc_warm = model.mixed;
            roc_path.emplace_back(lambda, std::move(fr.params.B));
        }
        add(model_name, model.family, "auc", "all",
            roc_auc(support_roc(sim.B_true, roc_path)));
        add(model_name, model.family, "chosen_lambda", "all",
            sel.curve[sel.chosen_index].lambda);
        if (const auto* net = std::get_if<NetworkRegPenalty>(&family)) {
            add(model_name, model.family, "chosen_lambda_x", "all", net->lambda_x);
            add(model_name, model.family, "chosen_lambda_y", "all", net->lambda_y);
        }
        add(model_name, model.family, "active_joint", "all",
            active_feature_count(best.params.B).joint_rows);
        add(model_name, model.family, "d0", "all", static_cast<double>(best.d0));
        add(model_name, model.family, "bic", "all", sel.curve[sel.chosen_index].bic);
        add(model_name, model.family, "iterations", "all",
            static_cast<double>(best.iterations));
        add(model_name, model.family, "converged", "all", best.converged ? 1.0 : 0.0);
    }
    return rows;
}

}  // namespace

int cmd_replicate(const RunConfig& config, const CommandOptions& opts) {
    require_keys(config.root, "config", kTopKeys);
    const std::string dir = resolve_out_dir(config, opts);
    ensure_dir(dir);

    const std::uint64_t master_seed = resolve_seed(config, opts);
    ScenarioSpec base = parse_scenario(config, master_seed);
    const ReplicateSettings settings = parse_replicate(config);
    const EmConfig cfg = parse_em(config);
    const int threads = resolve_thread_count(config, opts);
    const auto response_names = default_names("y", base.r);

    std::vector<std::vector<MetricRow>> slots(settings.repetitions);
    parallel_for(settings.repetitions, threads, [&](int m) {
        slots[m] = run_replication(base, master_seed, m, settings, cfg, response_names);
        if (!opts.quiet) {
            std::fprintf(stderr, "replicate: finished repetition %d/%d\n", m + 1,
                         settings.repetitions);
        }
    });

    Table per_rep;
    per_rep.header = {"replication", "model", "penalty", "metric", "response", "value"};
    for (int m = 0; m < settings.repetitions; ++m) {
        for (const auto& row : slots[m]) {
            per_rep.rows.push_back({std::to_string(m + 1), row.model, row.penalty,
                                    row.metric, row.response,
                                    std::isnan(row.value) ? "NA" : format_double(row.value)});
        }
    }
    write_csv(dir + "/per_replication.csv", per_rep);

    // Aggregate by (model, penalty, metric, response) in first-appearance order.
    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> groups;
    for (int m = 0; m < settings.repetitions; ++m) {
        for (const auto& row : slots[m]) {
            const std::string key =
                row.model + "," + row.penalty + "," + row.metric + "," + row.response;
            auto [it, inserted] = groups.try_emplace(key);
            if (inserted) order.push_back(key);
            if (!std::isnan(row.value)) it->second.push_back(row.value);
        }
    }
    Table agg;
    agg.header = {"model", "penalty", "metric", "response", "mean", "sd", "n"};
    for (const auto& key : order) {
        const auto& values = groups[key];
        double mean = 0.0;
        for (double v : values) mean += v;
        if (!values.empty()) mean /= static_cast<double>(values.size());
        double var = 0.0;
        for (double v : values) var += (v - mean) * (v - mean);
        const double sd = values.size() > 1
                              ? std::sqrt(var / static_cast<double>(values.size() - 1))
                              : 0.0;
        std::vector<std::string> row;
        std::size_t start = 0;
        for (int field = 0; field < 4; ++field) {
            const std::size_t comma = key.find(',', start);
            row.push_back(key.substr(start, comma - start));
            start = comma + 1;
        }
        row.push_back(values.empty() ? "NA" : format_double(mean));
        row.push_back(values.empty() ? "NA" : format_double(sd));
        row.push_back(std::to_string(values.size()));
        agg.rows.push_back(std::move(row));
    }
    write_csv(dir + "/aggregate.csv", agg);

    json meta;
    meta["command"] = "replicate";
    meta["config_hash"] = hex_hash(config.hash());
    meta["master_seed"] = master_seed;
    meta["repetitions"] = settings.repetitions;
    meta["scenario"] = base.scenario == Scenario::RowWiseSparse ? "row_wise_sparse"
                                                                : "sparse_at_random";
    meta["grid_count"] = settings.grid_count;
    write_json(dir + "/metadata.json", meta);
    return kExitOk;
}

int exit_code_for_current_exception() {
    try {
        throw;
    } catch (const IoError&) {
        return kExitIo;
    } catch (const DivergenceError&) {
        return kExitNonConvergence;
    } catch (const NumericError&) {
        return kExitNonConvergence;
    } catch (const Error&) {
        return kExitValidation;
    } catch (const std::exception&) {
        return kExitValidation;
    }
}

}  // namespace mtlmm
