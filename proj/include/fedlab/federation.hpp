#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedlab/csvio.hpp"
#include "fedlab/dataset.hpp"
#include "fedlab/losses.hpp"
#include "fedlab/model.hpp"
#include "fedlab/rng.hpp"
#include "fedlab/train.hpp"

namespace fedlab {

enum class Algo { FedAkd, FedAvg, Standalone, AkdAllData, AkdSingleDist, AkdCorrectAgg };
enum class AggWeighting { DatasetSize, CorrectCount };

inline std::string to_string(Algo a) {
    switch (a) {
        case Algo::FedAkd: return "fedakd";
        case Algo::FedAvg: return "fedavg";
        case Algo::Standalone: return "standalone";
        case Algo::AkdAllData: return "akd_alldata";
        case Algo::AkdSingleDist: return "akd_singledist";
        case Algo::AkdCorrectAgg: return "akd_correctagg";
    }
    throw std::logic_error("unreachable");
}

inline Algo algo_from_string(const std::string& s) {
    if (s == "fedakd") return Algo::FedAkd;
    if (s == "fedavg") return Algo::FedAvg;
    if (s == "standalone") return Algo::Standalone;
    if (s == "akd_alldata") return Algo::AkdAllData;
    if (s == "akd_singledist") return Algo::AkdSingleDist;
    if (s == "akd_correctagg") return Algo::AkdCorrectAgg;
    throw std::invalid_argument("unknown algorithm: " + s);
}

inline bool is_akd_family(Algo a) {
    return a == Algo::FedAkd || a == Algo::AkdAllData || a == Algo::AkdSingleDist ||
           a == Algo::AkdCorrectAgg;
}

/// Protocol hyperparameters for one federated run.
struct FedConfig {
    int clients = 1;        // K
    int rounds = 1;         // T
    double eta = 0.05;      // learning rate
    double alpha = 1.0;     // global->local distillation coefficient
    double beta = 1.0;      // local->global distillation coefficient
    int local_epochs = 1;
    Eigen::Index batch = 32;
    Algo algo = Algo::FedAkd;
    AggWeighting agg_weighting = AggWeighting::DatasetSize;
    std::uint64_t seed = 0;
    ModelKind model = ModelKind::Linear;
    Eigen::Index hidden = 32;
    double tau = 1.0;
};

inline void validate(const FedConfig& cfg) {
    if (cfg.clients < 1 || cfg.rounds < 1) throw std::invalid_argument("need K >= 1 and T >= 1");
    if (cfg.eta <= 0.0) throw std::invalid_argument("learning rate must be positive");
    if (cfg.alpha < 0.0 || cfg.beta < 0.0)
        throw std::invalid_argument("distillation coefficients must be nonnegative");
    if (cfg.local_epochs < 1 || cfg.batch < 1)
        throw std::invalid_argument("need local_epochs >= 1 and batch >= 1");
    if (cfg.agg_weighting == AggWeighting::CorrectCount && cfg.algo != Algo::AkdCorrectAgg)
        throw std::invalid_argument("correct_count weighting is only valid with akd_correctagg");
}

struct ClientState {
    int id = 0;
    Classifier local_model;
    Dataset train_data;
    Dataset test_data;
};

struct ClientRound {
    int client_id = 0;
    double acc_local = 0.0;
    Eigen::Index correct_set_size = 0;
    Eigen::Index data_size = 0;
};

struct RoundRecord {
    int round = 0;
    double global_loss = 0.0;
    std::vector<ClientRound> per_client; // ascending client id
};

struct RoundHistory {
    std::vector<RoundRecord> rounds;
};

inline void write_history_csv(const RoundHistory& history, const std::string& path) {
    CsvWriter w(path);
    w.row({"round", "global_loss", "client", "acc_local", "I_size", "D_size"});
    for (const auto& rec : history.rounds)
        for (const auto& c : rec.per_client)
            w.row({std::to_string(rec.round), format_double(rec.global_loss),
                   std::to_string(c.client_id), format_double(c.acc_local),
                   std::to_string(c.correct_set_size), std::to_string(c.data_size)});
    w.close();
}

/// Exactly the samples the model classifies correctly, original order kept.
inline Dataset select_high_confidence(const Classifier& model, const Dataset& data) {
    std::vector<Eigen::Index> keep;
    if (data.size() > 0) {
        Eigen::VectorXi pred = predict(model, data.features);
        for (Eigen::Index i = 0; i < data.size(); ++i)
            if (pred[i] == data.labels[i]) keep.push_back(i);
    }
    Dataset out = take_rows(data, keep);
    out.classes = data.classes;
    return out;
}

struct ClientUpdateResult {
    Classifier local_model;   // w_k after the global->local step
    Classifier global_upload; // w_{g,k} after the local->global step
    Eigen::Index correct_set_size = 0;
    bool upload_skipped = false; // empty correct set: the incoming global model went back as-is
};

/// One client's round. Step 1 distills the incoming global model into the
/// local one over all local data; step 2 selects the correctly predicted
/// samples; step 3 distills the *already updated* local model into a copy of
/// the incoming global model over that subset only. The two trainings draw
/// from disjoint streams keyed by (seed, client, round, step), so execution
/// order across clients cannot change results.
inline ClientUpdateResult client_update(const ClientState& client, const Classifier& global_model,
                                        const FedConfig& cfg, int round) {
    ClientUpdateResult out;
    const auto cid = static_cast<std::uint64_t>(client.id);
    const auto r = static_cast<std::uint64_t>(round);

    auto rng_local = make_stream(cfg.seed, {cid, r, 1});
    if (cfg.algo == Algo::AkdSingleDist) {
        // Overwrite with the global model, then plain local training.
        out.local_model =
            train(global_model, client.train_data, nullptr, 0.0, cfg.eta, cfg.local_epochs,
                  cfg.batch, rng_local)
                .model;
    } else {
        out.local_model = train(client.local_model, client.train_data, &global_model, cfg.alpha,
                                cfg.eta, cfg.local_epochs, cfg.batch, rng_local)
                              .model;
    }

    Dataset correct = select_high_confidence(out.local_model, client.train_data);
    out.correct_set_size = correct.size();

    const Dataset& step3_data = cfg.algo == Algo::AkdAllData ? client.train_data : correct;
    if (step3_data.size() == 0) {
        out.global_upload = global_model;
        out.upload_skipped = true;
        return out;
    }
    auto rng_global = make_stream(cfg.seed, {cid, r, 3});
    out.global_upload = train(global_model, step3_data, &out.local_model, cfg.beta, cfg.eta,
                              cfg.local_epochs, cfg.batch, rng_global)
                            .model;
    return out;
}

/// Parameter-wise convex combination; weights normalized to sum one.
inline Classifier server_aggregate(const std::vector<Classifier>& models,
                                   const std::vector<double>& weights) {
    if (models.empty() || models.size() != weights.size())
        throw std::invalid_argument("models/weights mismatch");
    double total = 0.0;
    for (double w : weights) {
        if (w < 0.0) throw std::invalid_argument("negative aggregation weight");
        total += w;
    }
    if (total == 0.0) throw std::invalid_argument("aggregation weights are all zero");

    Classifier out = models.front();
    out.w1.setZero();
    out.b1.setZero();
    if (out.w2.size()) out.w2.setZero();
    if (out.b2.size()) out.b2.setZero();
    for (size_t i = 0; i < models.size(); ++i) {
        const double w = weights[i] / total;
        out.w1 += w * models[i].w1;
        out.b1 += w * models[i].b1;
        if (out.w2.size()) out.w2 += w * models[i].w2;
        if (out.b2.size()) out.b2 += w * models[i].b2;
    }
    return out;
}

struct FederationResult {
    RoundHistory history;
    Classifier global_model;
    std::vector<Classifier> local_models; // ascending client id
};

inline Classifier make_initial_model(const FedConfig& cfg, Eigen::Index dims, Eigen::Index classes) {
    if (cfg.model == ModelKind::Linear) return make_linear(dims, classes, cfg.tau);
    auto rng = make_stream(cfg.seed, {0x1417u});
    return make_mlp1(dims, classes, cfg.hidden, rng, cfg.tau);
}

/// Full protocol driver. Every local model and the global model start from
/// one shared initial model. Aggregation and bookkeeping always walk clients
/// in ascending id order, so client-list order is irrelevant to the outcome.
inline FederationResult run_federation(const FedConfig& cfg, const std::vector<ClientState>& clients,
                                       const Dataset& pooled) {
    validate(cfg);
    if (static_cast<int>(clients.size()) != cfg.clients)
        throw std::invalid_argument("client count does not match config");
    for (const auto& c : clients)
        if (c.train_data.size() == 0 || c.test_data.size() == 0)
            throw std::invalid_argument("client train/test data must be nonempty");

    std::vector<size_t> by_id(clients.size());
    for (size_t i = 0; i < clients.size(); ++i) by_id[i] = i;
    std::sort(by_id.begin(), by_id.end(),
              [&clients](size_t a, size_t b) { return clients[a].id < clients[b].id; });

    const Eigen::Index dims = clients[by_id[0]].train_data.dims();
    const Eigen::Index num_classes = clients[by_id[0]].train_data.classes;
    Classifier global_model = make_initial_model(cfg, dims, num_classes);

    std::vector<ClientState> state;
    state.reserve(clients.size());
    for (size_t i : by_id) {
        ClientState s = clients[i];
        s.local_model = global_model;
        state.push_back(std::move(s));
    }

    FederationResult result;
    for (int t = 1; t <= cfg.rounds; ++t) {
        RoundRecord rec;
        rec.round = t;

        if (cfg.algo == Algo::Standalone || cfg.algo == Algo::FedAvg) {
            std::vector<Classifier> uploads;
            std::vector<double> weights;
            for (auto& s : state) {
                auto rng = make_stream(cfg.seed, {static_cast<std::uint64_t>(s.id),
                                                  static_cast<std::uint64_t>(t), 1});
                s.local_model = train(s.local_model, s.train_data, nullptr, 0.0, cfg.eta,
                                      cfg.local_epochs, cfg.batch, rng)
                                    .model;
                if (cfg.algo == Algo::FedAvg) {
                    uploads.push_back(s.local_model);
                    weights.push_back(static_cast<double>(s.train_data.size()));
                }
            }
            if (cfg.algo == Algo::FedAvg) {
                global_model = server_aggregate(uploads, weights);
                for (auto& s : state) s.local_model = global_model;
            }
        } else {
            std::vector<Classifier> uploads;
            std::vector<double> weights;
            std::vector<ClientUpdateResult> updates;
            updates.reserve(state.size());
            for (auto& s : state) updates.push_back(client_update(s, global_model, cfg, t));
            for (size_t i = 0; i < state.size(); ++i) {
                state[i].local_model = updates[i].local_model;
                uploads.push_back(updates[i].global_upload);
                weights.push_back(cfg.agg_weighting == AggWeighting::CorrectCount
                                      ? static_cast<double>(updates[i].correct_set_size)
                                      : static_cast<double>(state[i].train_data.size()));
            }
            double total = 0.0;
            for (double w : weights) total += w;
            if (total > 0.0) global_model = server_aggregate(uploads, weights);
            // all-zero correct counts: nothing trustworthy to merge, keep w_g

            for (size_t i = 0; i < state.size(); ++i) {
                ClientRound cr;
                cr.client_id = state[i].id;
                cr.correct_set_size = updates[i].correct_set_size;
                rec.per_client.push_back(cr);
            }
        }

        if (rec.per_client.empty()) rec.per_client.resize(state.size());
        for (size_t i = 0; i < state.size(); ++i) {
            auto& cr = rec.per_client[i];
            cr.client_id = state[i].id;
            cr.data_size = state[i].train_data.size();
            cr.acc_local = accuracy(state[i].local_model, state[i].test_data);
            if (cfg.algo == Algo::Standalone || cfg.algo == Algo::FedAvg)
                cr.correct_set_size =
                    select_high_confidence(state[i].local_model, state[i].train_data).size();
        }
        rec.global_loss = ce_loss(global_model, pooled);
        result.history.rounds.push_back(std::move(rec));
    }

    result.global_model = global_model;
    for (auto& s : state) result.local_models.push_back(s.local_model);
    return result;
}

} // namespace fedlab
