#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "fedlab/analysis.hpp"
#include "fedlab/csvio.hpp"
#include "fedlab/dataset.hpp"
#include "fedlab/federation.hpp"
#include "fedlab/gaussian.hpp"
#include "fedlab/metrics.hpp"
#include "fedlab/partition.hpp"
#include "fedlab/rng.hpp"
#include "fedlab/shift_theory.hpp"

namespace fedlab {

/// Bad or inconsistent configuration; the CLI maps this to exit code 2.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

enum class Scheme { Pow, Bcs, Ics, Cla, Dir };

inline std::string to_string(Scheme s) {
    switch (s) {
        case Scheme::Pow: return "pow";
        case Scheme::Bcs: return "bcs";
        case Scheme::Ics: return "ics";
        case Scheme::Cla: return "cla";
        case Scheme::Dir: return "dir";
    }
    throw std::logic_error("unreachable");
}

inline Scheme scheme_from_string(const std::string& s) {
    if (s == "pow") return Scheme::Pow;
    if (s == "bcs") return Scheme::Bcs;
    if (s == "ics") return Scheme::Ics;
    if (s == "cla") return Scheme::Cla;
    if (s == "dir") return Scheme::Dir;
    throw ConfigError("unknown partition scheme: " + s);
}

/// Covariate-shift schemes are judged on each client's own test split;
/// label-shift schemes on one shared test set.
inline bool pooled_evaluation(Scheme s) { return s == Scheme::Cla || s == Scheme::Dir; }

struct BlobsSpec {
    int classes = 2;
    Eigen::Index dims = 10;
    double separation = 2.0;
    Eigen::Index n = 4000;
};

struct DatasetSource {
    std::string type = "blobs"; // "blobs" or "csv"
    BlobsSpec blobs;
    std::string csv_path;
};

struct PartitionSpec {
    Scheme scheme = Scheme::Ics;
    double radius_c = 5.0;     // bcs/ics
    double exponent = 1.0;     // pow/ics
    double dirichlet_alpha = 1.0;
    double total_fraction = 0.5; // bcs/ics draw budget relative to the source
};

struct TheorySpec {
    Eigen::Index dims = 5;
    Eigen::Index n = 20000;
    std::vector<double> radii = {0.25, 1.0, 4.0};
    std::vector<long> sample_counts = {10000, 10000, 10000};
    double dsigma_ratio = 0.05;
};

struct AnalyzeSpec {
    Algo algo = Algo::FedAvg;
    int rounds = 10;
};

/// Whole-experiment description; the default values are the desk-scale
/// benchmark every directional check in the test suite runs on.
struct ExperimentConfig {
    DatasetSource dataset;
    PartitionSpec partition;
    FedConfig fed = [] {
        FedConfig f;
        f.clients = 8;
        f.rounds = 20;
        f.eta = 0.05;
        f.alpha = 1.0;
        f.beta = 1.0;
        f.local_epochs = 1;
        f.batch = 32;
        return f;
    }();
    std::vector<Algo> algos = {Algo::FedAkd};
    int runs = 1;
    std::uint64_t seed = 42;
    std::uint64_t seed_stride = 1;
    double test_fraction = 0.2;
    std::string out_dir = "out";
    TheorySpec theory;
    AnalyzeSpec analyze;
};

inline void validate(const ExperimentConfig& cfg) {
    if (cfg.runs < 1) throw ConfigError("runs must be >= 1");
    if (cfg.dataset.type != "blobs" && cfg.dataset.type != "csv")
        throw ConfigError("dataset type must be blobs or csv");
    if (cfg.dataset.type == "csv" && cfg.dataset.csv_path.empty())
        throw ConfigError("csv dataset requires a path");
    if (cfg.dataset.type == "blobs" &&
        (cfg.dataset.blobs.classes < 2 || cfg.dataset.blobs.dims < 1 || cfg.dataset.blobs.n < 2))
        throw ConfigError("blobs need classes >= 2, dims >= 1, n >= 2");
    if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0)
        throw ConfigError("test fraction must be in (0,1)");
    if (cfg.partition.total_fraction <= 0.0 || cfg.partition.total_fraction > 1.0)
        throw ConfigError("total fraction must be in (0,1]");
    if (cfg.partition.radius_c < 0.0) throw ConfigError("shift radius must be nonnegative");
    if (cfg.partition.dirichlet_alpha <= 0.0) throw ConfigError("dirichlet alpha must be positive");
    if (cfg.algos.empty()) throw ConfigError("need at least one algorithm");
    if (cfg.theory.radii.size() != cfg.theory.sample_counts.size())
        throw ConfigError("theory C and A lists must align");
    if (cfg.analyze.rounds < 1) throw ConfigError("analyze rounds must be >= 1");
    try {
        FedConfig fed = cfg.fed;
        fed.agg_weighting =
            fed.algo == Algo::AkdCorrectAgg ? AggWeighting::CorrectCount : AggWeighting::DatasetSize;
        validate(fed);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
}

inline nlohmann::json to_json(const ExperimentConfig& cfg) {
    nlohmann::json j;
    j["dataset"] = {{"type", cfg.dataset.type},
                    {"classes", cfg.dataset.blobs.classes},
                    {"dims", cfg.dataset.blobs.dims},
                    {"separation", cfg.dataset.blobs.separation},
                    {"n", cfg.dataset.blobs.n},
                    {"csv_path", cfg.dataset.csv_path}};
    j["partition"] = {{"scheme", to_string(cfg.partition.scheme)},
                      {"C", cfg.partition.radius_c},
                      {"exponent", cfg.partition.exponent},
                      {"dirichlet_alpha", cfg.partition.dirichlet_alpha},
                      {"total_fraction", cfg.partition.total_fraction}};
    j["fed"] = {{"K", cfg.fed.clients},       {"T", cfg.fed.rounds},
                {"eta", cfg.fed.eta},         {"alpha", cfg.fed.alpha},
                {"beta", cfg.fed.beta},       {"local_epochs", cfg.fed.local_epochs},
                {"batch", cfg.fed.batch},     {"model", to_string(cfg.fed.model)},
                {"hidden", cfg.fed.hidden},   {"tau", cfg.fed.tau}};
    std::vector<std::string> algos;
    for (Algo a : cfg.algos) algos.push_back(to_string(a));
    j["algos"] = algos;
    j["runs"] = cfg.runs;
    j["seed"] = cfg.seed;
    j["seed_stride"] = cfg.seed_stride;
    j["test_fraction"] = cfg.test_fraction;
    j["out"] = cfg.out_dir;
    j["theory"] = {{"dims", cfg.theory.dims},
                   {"n", cfg.theory.n},
                   {"C", cfg.theory.radii},
                   {"A", cfg.theory.sample_counts},
                   {"dsigma_ratio", cfg.theory.dsigma_ratio}};
    j["analyze"] = {{"algo", to_string(cfg.analyze.algo)}, {"rounds", cfg.analyze.rounds}};
    return j;
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    try {
        if (j.contains("dataset")) {
            const auto& d = j.at("dataset");
            if (d.contains("type")) cfg.dataset.type = d.at("type").get<std::string>();
            if (d.contains("classes")) cfg.dataset.blobs.classes = d.at("classes").get<int>();
            if (d.contains("dims")) cfg.dataset.blobs.dims = d.at("dims").get<Eigen::Index>();
            if (d.contains("separation"))
                cfg.dataset.blobs.separation = d.at("separation").get<double>();
            if (d.contains("n")) cfg.dataset.blobs.n = d.at("n").get<Eigen::Index>();
            if (d.contains("csv_path")) cfg.dataset.csv_path = d.at("csv_path").get<std::string>();
        }
        if (j.contains("partition")) {
            const auto& p = j.at("partition");
            if (p.contains("scheme"))
                cfg.partition.scheme = scheme_from_string(p.at("scheme").get<std::string>());
            if (p.contains("C")) cfg.partition.radius_c = p.at("C").get<double>();
            if (p.contains("exponent")) cfg.partition.exponent = p.at("exponent").get<double>();
            if (p.contains("dirichlet_alpha"))
                cfg.partition.dirichlet_alpha = p.at("dirichlet_alpha").get<double>();
            if (p.contains("total_fraction"))
                cfg.partition.total_fraction = p.at("total_fraction").get<double>();
        }
        if (j.contains("fed")) {
            const auto& f = j.at("fed");
            if (f.contains("K")) cfg.fed.clients = f.at("K").get<int>();
            if (f.contains("T")) cfg.fed.rounds = f.at("T").get<int>();
            if (f.contains("eta")) cfg.fed.eta = f.at("eta").get<double>();
            if (f.contains("alpha")) cfg.fed.alpha = f.at("alpha").get<double>();
            if (f.contains("beta")) cfg.fed.beta = f.at("beta").get<double>();
            if (f.contains("local_epochs")) cfg.fed.local_epochs = f.at("local_epochs").get<int>();
            if (f.contains("batch")) cfg.fed.batch = f.at("batch").get<Eigen::Index>();
            if (f.contains("model"))
                cfg.fed.model = model_kind_from_string(f.at("model").get<std::string>());
            if (f.contains("hidden")) cfg.fed.hidden = f.at("hidden").get<Eigen::Index>();
            if (f.contains("tau")) cfg.fed.tau = f.at("tau").get<double>();
        }
        if (j.contains("algos")) {
            cfg.algos.clear();
            for (const auto& a : j.at("algos")) cfg.algos.push_back(algo_from_string(a.get<std::string>()));
        }
        if (j.contains("runs")) cfg.runs = j.at("runs").get<int>();
        if (j.contains("seed")) cfg.seed = j.at("seed").get<std::uint64_t>();
        if (j.contains("seed_stride")) cfg.seed_stride = j.at("seed_stride").get<std::uint64_t>();
        if (j.contains("test_fraction")) cfg.test_fraction = j.at("test_fraction").get<double>();
        if (j.contains("out")) cfg.out_dir = j.at("out").get<std::string>();
        if (j.contains("theory")) {
            const auto& t = j.at("theory");
            if (t.contains("dims")) cfg.theory.dims = t.at("dims").get<Eigen::Index>();
            if (t.contains("n")) cfg.theory.n = t.at("n").get<Eigen::Index>();
            if (t.contains("C")) cfg.theory.radii = t.at("C").get<std::vector<double>>();
            if (t.contains("A")) cfg.theory.sample_counts = t.at("A").get<std::vector<long>>();
            if (t.contains("dsigma_ratio")) cfg.theory.dsigma_ratio = t.at("dsigma_ratio").get<double>();
        }
        if (j.contains("analyze")) {
            const auto& a = j.at("analyze");
            if (a.contains("algo")) cfg.analyze.algo = algo_from_string(a.at("algo").get<std::string>());
            if (a.contains("rounds")) cfg.analyze.rounds = a.at("rounds").get<int>();
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("bad config: ") + e.what());
    }
    validate(cfg);
    return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config: " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("bad config json: ") + e.what());
    }
    return config_from_json(j);
}

/// Balanced Gaussian blobs: class c is N(mu_c, I) with the means
/// `separation` apart along the first axis, rows shuffled.
inline Dataset make_blobs(const BlobsSpec& spec, std::mt19937_64& rng) {
    Dataset out;
    out.classes = spec.classes;
    out.features.resize(spec.n, spec.dims);
    out.labels.resize(spec.n);
    std::normal_distribution<double> n01(0.0, 1.0);

    std::vector<int> labels(static_cast<size_t>(spec.n));
    for (Eigen::Index i = 0; i < spec.n; ++i)
        labels[static_cast<size_t>(i)] = static_cast<int>(i % spec.classes);
    std::shuffle(labels.begin(), labels.end(), rng);

    const double half = (static_cast<double>(spec.classes) - 1.0) / 2.0;
    for (Eigen::Index i = 0; i < spec.n; ++i) {
        const int c = labels[static_cast<size_t>(i)];
        out.labels[i] = c;
        for (Eigen::Index jj = 0; jj < spec.dims; ++jj) out.features(i, jj) = n01(rng);
        out.features(i, 0) += (static_cast<double>(c) - half) * spec.separation;
    }
    return out;
}

inline Dataset load_base_dataset(const ExperimentConfig& cfg, std::uint64_t seed) {
    if (cfg.dataset.type == "csv") return read_csv(cfg.dataset.csv_path);
    auto rng = make_stream(seed, {0xdadau});
    return make_blobs(cfg.dataset.blobs, rng);
}

namespace detail {

inline std::vector<Eigen::Index> scheme_sizes(const PartitionSpec& part, Eigen::Index pool_n,
                                              int k_clients) {
    switch (part.scheme) {
        case Scheme::Pow:
            return powerlaw_sizes(pool_n, k_clients, part.exponent);
        case Scheme::Bcs: {
            const auto total = static_cast<Eigen::Index>(
                std::floor(part.total_fraction * static_cast<double>(pool_n)));
            const Eigen::Index each = total / k_clients;
            if (each < 1) throw ConfigError("pool too small for equal client sizes");
            return std::vector<Eigen::Index>(static_cast<size_t>(k_clients), each);
        }
        case Scheme::Ics: {
            const auto total = static_cast<Eigen::Index>(
                std::floor(part.total_fraction * static_cast<double>(pool_n)));
            return powerlaw_sizes(total, k_clients, part.exponent);
        }
        default:
            throw std::logic_error("scheme_sizes is only defined for pow/bcs/ics");
    }
}

/// Disjoint shuffled slices with the given sizes.
inline std::vector<Dataset> slice_partition(const Dataset& data,
                                            const std::vector<Eigen::Index>& sizes,
                                            std::mt19937_64& rng) {
    Eigen::Index total = 0;
    for (Eigen::Index s : sizes) total += s;
    if (total > data.size()) throw ConfigError("sizes exceed the available pool");
    std::vector<Eigen::Index> order(static_cast<size_t>(data.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    std::vector<Dataset> out;
    Eigen::Index at = 0;
    for (Eigen::Index s : sizes) {
        std::vector<Eigen::Index> rows(order.begin() + at, order.begin() + at + s);
        out.push_back(take_rows(data, rows));
        at += s;
    }
    return out;
}

/// Weighted draw with replacement under a shifted mean; the shift is shared
/// with the caller so train and test pools can use the same one.
inline Dataset weighted_draw(const Dataset& pool, const GaussianParams& base,
                             const Eigen::VectorXd& delta, Eigen::Index count,
                             std::mt19937_64& rng) {
    Eigen::VectorXd w = importance_weights(pool, base.mean + delta, base);
    std::discrete_distribution<Eigen::Index> pick(w.data(), w.data() + w.size());
    std::vector<Eigen::Index> rows(static_cast<size_t>(count));
    for (auto& r : rows) r = pick(rng);
    return take_rows(pool, rows);
}

} // namespace detail

struct ClientBuild {
    std::vector<ClientState> clients;   // id = index
    Dataset pooled_train;               // union of client training data
    std::vector<Eigen::Index> sizes;    // declared per-client totals (train+test)
    std::vector<Eigen::VectorXd> deltas; // bcs/ics only
};

/// Materialize the federated clients for one run: split the base data into
/// train/test pools, apply the partition scheme to each pool, and pair the
/// results up per client. Covariate-shift schemes draw both pools through
/// the same per-client mean shift.
inline ClientBuild build_clients(const ExperimentConfig& cfg, std::uint64_t seed) {
    const Dataset base = load_base_dataset(cfg, seed);
    const int k_clients = cfg.fed.clients;

    auto pool_rng = make_stream(seed, {0x9001u});
    const auto test_n = std::max<Eigen::Index>(
        1, static_cast<Eigen::Index>(std::llround(cfg.test_fraction * static_cast<double>(base.size()))));
    auto pools = detail::slice_partition(base, {base.size() - test_n, test_n}, pool_rng);
    Dataset& train_pool = pools[0];
    Dataset& test_pool = pools[1];

    ClientBuild build;
    std::vector<Dataset> train_parts, test_parts;
    const Scheme scheme = cfg.partition.scheme;

    if (scheme == Scheme::Pow) {
        auto rng_train = make_stream(seed, {0x90b0u, 1});
        auto rng_test = make_stream(seed, {0x90b0u, 2});
        train_parts = detail::slice_partition(
            train_pool, detail::scheme_sizes(cfg.partition, train_pool.size(), k_clients), rng_train);
        test_parts = detail::slice_partition(
            test_pool, detail::scheme_sizes(cfg.partition, test_pool.size(), k_clients), rng_test);
    } else if (scheme == Scheme::Bcs || scheme == Scheme::Ics) {
        const auto train_sizes = detail::scheme_sizes(cfg.partition, train_pool.size(), k_clients);
        const auto test_sizes = detail::scheme_sizes(cfg.partition, test_pool.size(), k_clients);
        const GaussianParams base_fit = fit_gaussian(train_pool);
        for (int k = 0; k < k_clients; ++k) {
            auto rng = make_stream(seed, {0x5c1f7u, static_cast<std::uint64_t>(k)});
            Eigen::VectorXd delta = sample_shift_vector(base_fit, cfg.partition.radius_c, rng);
            train_parts.push_back(detail::weighted_draw(train_pool, base_fit, delta,
                                                        train_sizes[static_cast<size_t>(k)], rng));
            test_parts.push_back(detail::weighted_draw(test_pool, base_fit, delta,
                                                       test_sizes[static_cast<size_t>(k)], rng));
            build.deltas.push_back(std::move(delta));
        }
    } else {
        auto rng = make_stream(seed, {0x90b0u, 3});
        train_parts = scheme == Scheme::Cla
                          ? partition_cla(train_pool, k_clients, rng)
                          : partition_dirichlet(train_pool, k_clients, cfg.partition.dirichlet_alpha, rng);
        test_parts.assign(static_cast<size_t>(k_clients), test_pool);
    }

    for (int k = 0; k < k_clients; ++k) {
        auto& train_k = train_parts[static_cast<size_t>(k)];
        auto& test_k = test_parts[static_cast<size_t>(k)];
        if (train_k.size() == 0 || test_k.size() == 0)
            throw ConfigError("client " + std::to_string(k) + " ended up with empty data");
        build.sizes.push_back(train_k.size() + (pooled_evaluation(scheme) ? 0 : test_k.size()));
        ClientState state;
        state.id = k;
        state.train_data = std::move(train_k);
        state.test_data = std::move(test_k);
        build.clients.push_back(std::move(state));
    }
    std::vector<Dataset> trains;
    for (const auto& c : build.clients) trains.push_back(c.train_data);
    build.pooled_train = concat(trains);
    return build;
}

// ---------------------------------------------------------------------------
// Commands. Each returns a process exit code: 0 ok, 2 config error (thrown as
// ConfigError by callers), 3 when the only failures were undefined metrics.
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const ExperimentConfig& cfg) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    const Dataset base = load_base_dataset(cfg, cfg.seed);
    const int k_clients = cfg.fed.clients;
    std::vector<Dataset> parts;
    nlohmann::json manifest;
    manifest["scheme"] = to_string(cfg.partition.scheme);
    manifest["K"] = k_clients;
    manifest["seed"] = cfg.seed;

    switch (cfg.partition.scheme) {
        case Scheme::Pow: {
            auto rng = make_stream(cfg.seed, {0x90b0u, 1});
            parts = detail::slice_partition(
                base, detail::scheme_sizes(cfg.partition, base.size(), k_clients), rng);
            manifest["exponent"] = cfg.partition.exponent;
            break;
        }
        case Scheme::Bcs:
        case Scheme::Ics: {
            ShiftSpec spec;
            spec.radius_c = cfg.partition.radius_c;
            spec.sizes = detail::scheme_sizes(cfg.partition, base.size(), k_clients);
            ShiftResult shifted = generate_covariate_shift(base, spec, cfg.seed);
            parts = std::move(shifted.clients);
            manifest["C"] = cfg.partition.radius_c;
            if (cfg.partition.scheme == Scheme::Ics) manifest["exponent"] = cfg.partition.exponent;
            nlohmann::json deltas = nlohmann::json::array();
            for (const auto& d : shifted.deltas)
                deltas.push_back(std::vector<double>(d.data(), d.data() + d.size()));
            manifest["deltas"] = deltas;
            break;
        }
        case Scheme::Cla: {
            auto rng = make_stream(cfg.seed, {0x90b0u, 3});
            parts = partition_cla(base, k_clients, rng);
            break;
        }
        case Scheme::Dir: {
            auto rng = make_stream(cfg.seed, {0x90b0u, 3});
            parts = partition_dirichlet(base, k_clients, cfg.partition.dirichlet_alpha, rng);
            manifest["dirichlet_alpha"] = cfg.partition.dirichlet_alpha;
            break;
        }
    }

    std::vector<Eigen::Index> sizes;
    std::vector<std::string> files;
    for (int k = 0; k < k_clients; ++k) {
        const std::string name = "client_" + std::to_string(k) + ".csv";
        write_csv(parts[static_cast<size_t>(k)], (fs::path(cfg.out_dir) / name).string());
        sizes.push_back(parts[static_cast<size_t>(k)].size());
        files.push_back(name);
    }
    manifest["sizes"] = sizes;
    manifest["files"] = files;

    std::ofstream out(fs::path(cfg.out_dir) / "manifest.json", std::ios::binary);
    out << manifest.dump(2) << "\n";
    if (!out) throw std::runtime_error("failed writing manifest");
    return 0;
}

struct RunRow {
    std::string algo;
    std::uint64_t seed = 0;
    std::optional<double> cf;
    double max_acc = 0.0;
    double avg_acc = 0.0;
};

struct AlgoSummary {
    std::string algo;
    int runs = 0;
    bool cf_defined = true;
    double cf_mean = 0.0, cf_std = 0.0;
    double max_mean = 0.0, max_std = 0.0;
    double avg_mean = 0.0, avg_std = 0.0;
};

/// Mean and population standard deviation (divide by the run count).
inline std::pair<double, double> mean_pop_std(const std::vector<double>& xs) {
    const double n = static_cast<double>(xs.size());
    double mean = 0.0;
    for (double x : xs) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    var /= n;
    return {mean, std::sqrt(var)};
}

inline std::vector<AlgoSummary> summarize_runs(const std::vector<RunRow>& rows,
                                               const std::vector<std::string>& algo_order) {
    std::vector<AlgoSummary> out;
    for (const auto& algo : algo_order) {
        AlgoSummary s;
        s.algo = algo;
        std::vector<double> cfs, maxs, avgs;
        for (const auto& r : rows) {
            if (r.algo != algo) continue;
            ++s.runs;
            maxs.push_back(r.max_acc);
            avgs.push_back(r.avg_acc);
            if (r.cf.has_value())
                cfs.push_back(*r.cf);
            else
                s.cf_defined = false;
        }
        if (s.runs == 0) continue;
        std::tie(s.max_mean, s.max_std) = mean_pop_std(maxs);
        std::tie(s.avg_mean, s.avg_std) = mean_pop_std(avgs);
        if (s.cf_defined) std::tie(s.cf_mean, s.cf_std) = mean_pop_std(cfs);
        out.push_back(std::move(s));
    }
    return out;
}

struct RunOutput {
    std::vector<RunRow> rows;
    std::vector<AlgoSummary> summary;
    bool any_undefined_cf = false;
};

/// One federated experiment: standalone pass first (it defines Acc_s for the
/// fairness coefficient), then every requested algorithm on the same clients.
inline RunOutput run_experiment(const ExperimentConfig& cfg, bool write_files = true) {
    validate(cfg);
    namespace fs = std::filesystem;
    if (write_files) fs::create_directories(cfg.out_dir);

    RunOutput out;
    std::vector<std::string> algo_order;
    for (Algo a : cfg.algos) algo_order.push_back(to_string(a));

    struct ClientRow {
        std::string algo;
        std::uint64_t seed;
        int client;
        double acc_standalone;
        double acc_federated;
    };
    std::vector<ClientRow> client_rows;

    for (int r = 0; r < cfg.runs; ++r) {
        const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(r) * cfg.seed_stride;
        ClientBuild build = build_clients(cfg, run_seed);

        auto run_one = [&](Algo algo) {
            FedConfig fed = cfg.fed;
            fed.algo = algo;
            fed.seed = run_seed;
            fed.agg_weighting = algo == Algo::AkdCorrectAgg ? AggWeighting::CorrectCount
                                                            : AggWeighting::DatasetSize;
            validate(fed);
            return run_federation(fed, build.clients, build.pooled_train);
        };

        const FederationResult standalone = run_one(Algo::Standalone);
        std::vector<double> acc_s;
        for (const auto& c : standalone.history.rounds.back().per_client)
            acc_s.push_back(c.acc_local);

        for (Algo algo : cfg.algos) {
            const FederationResult fed =
                algo == Algo::Standalone ? standalone : run_one(algo);
            std::vector<double> acc_p;
            for (const auto& c : fed.history.rounds.back().per_client) acc_p.push_back(c.acc_local);

            AccuracyProfile profile{acc_s, acc_p};
            MetricsSummary m = summarize(profile);
            RunRow row;
            row.algo = to_string(algo);
            row.seed = run_seed;
            row.cf = m.cf;
            row.max_acc = m.max_acc;
            row.avg_acc = m.avg_acc;
            if (!m.cf.has_value()) out.any_undefined_cf = true;
            out.rows.push_back(row);

            for (size_t k = 0; k < acc_p.size(); ++k)
                client_rows.push_back({to_string(algo), run_seed, static_cast<int>(k), acc_s[k],
                                       acc_p[k]});
            if (write_files)
                write_history_csv(fed.history,
                                  (fs::path(cfg.out_dir) /
                                   ("history_" + to_string(algo) + "_run" + std::to_string(r) + ".csv"))
                                      .string());
        }
    }

    out.summary = summarize_runs(out.rows, algo_order);
    if (write_files) {
        CsvWriter runs_csv((fs::path(cfg.out_dir) / "runs.csv").string());
        runs_csv.row({"algo", "seed", "cf", "max_acc", "avg_acc"});
        for (const auto& r : out.rows)
            runs_csv.row({r.algo, std::to_string(r.seed),
                          r.cf.has_value() ? format_double(*r.cf) : "undefined",
                          format_double(r.max_acc), format_double(r.avg_acc)});
        runs_csv.close();

        CsvWriter clients_csv((fs::path(cfg.out_dir) / "clients.csv").string());
        clients_csv.row({"algo", "seed", "client", "acc_standalone", "acc_federated"});
        for (const auto& c : client_rows)
            clients_csv.row({c.algo, std::to_string(c.seed), std::to_string(c.client),
                             format_double(c.acc_standalone), format_double(c.acc_federated)});
        clients_csv.close();

        CsvWriter summary_csv((fs::path(cfg.out_dir) / "summary.csv").string());
        summary_csv.row({"algo", "runs", "cf_mean", "cf_std", "max_acc_mean", "max_acc_std",
                         "avg_acc_mean", "avg_acc_std"});
        for (const auto& s : out.summary)
            summary_csv.row({s.algo, std::to_string(s.runs),
                             s.cf_defined ? format_double(s.cf_mean) : "undefined",
                             s.cf_defined ? format_double(s.cf_std) : "undefined",
                             format_double(s.max_mean), format_double(s.max_std),
                             format_double(s.avg_mean), format_double(s.avg_std)});
        summary_csv.close();
    }
    return out;
}

inline int cmd_run(const ExperimentConfig& cfg) {
    return run_experiment(cfg).any_undefined_cf ? 3 : 0;
}

inline int cmd_validate_theory(const ExperimentConfig& cfg) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    std::vector<ValidationRow> all;
    for (int r = 0; r < cfg.runs; ++r) {
        const std::uint64_t run_seed = cfg.seed + static_cast<std::uint64_t>(r) * cfg.seed_stride;
        auto rng = make_stream(run_seed, {0xba5eu});
        GaussianParams standard = make_gaussian(
            Eigen::VectorXd::Zero(cfg.theory.dims),
            Eigen::MatrixXd::Identity(cfg.theory.dims, cfg.theory.dims));
        Dataset base = draw_gaussian(standard, cfg.theory.n, rng);
        auto rows = validate_approximation(base, cfg.theory.radii, cfg.theory.sample_counts,
                                           run_seed, cfg.theory.dsigma_ratio);
        all.insert(all.end(), rows.begin(), rows.end());
    }
    write_validation_csv(all, (fs::path(cfg.out_dir) / "validation.csv").string());
    return 0;
}

inline int cmd_analyze(const ExperimentConfig& cfg) {
    validate(cfg);
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);

    ClientBuild build = build_clients(cfg, cfg.seed);
    FedConfig fed = cfg.fed;
    fed.algo = cfg.analyze.algo;
    fed.rounds = cfg.analyze.rounds;
    fed.seed = cfg.seed;
    fed.agg_weighting = fed.algo == Algo::AkdCorrectAgg ? AggWeighting::CorrectCount
                                                        : AggWeighting::DatasetSize;
    validate(fed);
    FederationResult result = run_federation(fed, build.clients, build.pooled_train);

    std::vector<std::pair<Dataset, Classifier>> pairs;
    std::vector<Dataset> train_sets;
    for (size_t k = 0; k < build.clients.size(); ++k) {
        pairs.emplace_back(build.clients[k].train_data, result.local_models[k]);
        train_sets.push_back(build.clients[k].train_data);
    }
    auto rows = right_wrong_divergence(pairs);
    write_divergence_csv(rows, (fs::path(cfg.out_dir) / "right_wrong.csv").string());

    auto divergences = client_divergence(train_sets);
    CsvWriter div_csv((fs::path(cfg.out_dir) / "client_divergence.csv").string());
    div_csv.row({"client", "n", "kl_to_global"});
    for (size_t k = 0; k < divergences.size(); ++k)
        div_csv.row({std::to_string(k), std::to_string(train_sets[k].size()),
                     format_double(divergences[k])});
    div_csv.close();
    return 0;
}

} // namespace fedlab
