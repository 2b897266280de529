#pragma once

// Leave-one-domain-out experiment harness over the synthetic corpus: protocol
// construction (DG and SDG), a deterministic training loop around AdamW, and
// CSV reporting. Every random stream derives from (data seed, run seed), so a
// rerun with the same config produces byte-identical CSV output.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "loasp/backbone.hpp"
#include "loasp/metrics.hpp"
#include "loasp/optim.hpp"
#include "loasp/synthetic.hpp"

namespace loasp {

struct Protocol {
    std::string mode;  // "DG" or "SDG"
    std::vector<std::string> train_domains;
    std::vector<std::string> test_domains;
    std::string held_out;  // reporting key: DG test domain, SDG train domain
};

// DG holds one domain out for testing and trains on the rest; SDG trains on
// exactly the named domain and tests on all others.
inline Protocol build_protocol(const std::vector<std::string>& domains, const std::string& mode,
                               const std::string& held_out) {
    if (domains.empty()) throw ConfigError("build_protocol: empty domain list");
    for (std::size_t i = 0; i < domains.size(); ++i)
        for (std::size_t j = i + 1; j < domains.size(); ++j)
            if (domains[i] == domains[j])
                throw ConfigError("build_protocol: duplicate domain '" + domains[i] + "'");
    bool known = false;
    for (const std::string& d : domains) known = known || d == held_out;
    if (!known)
        throw ConfigError("build_protocol: domain '" + held_out + "' is not in the domain list");

    Protocol p;
    p.mode = mode;
    p.held_out = held_out;
    if (mode == "DG") {
        for (const std::string& d : domains)
            if (d != held_out) p.train_domains.push_back(d);
        p.test_domains.push_back(held_out);
        if (p.train_domains.size() < 2)
            throw ConfigError("build_protocol: DG needs at least 2 training domains, got " +
                              std::to_string(p.train_domains.size()));
    } else if (mode == "SDG") {
        p.train_domains.push_back(held_out);
        for (const std::string& d : domains)
            if (d != held_out) p.test_domains.push_back(d);
        if (p.test_domains.empty())
            throw ConfigError("build_protocol: SDG needs at least one other domain to test on");
    } else {
        throw ConfigError("build_protocol: unknown mode '" + mode + "', expected DG or SDG");
    }
    return p;
}

struct RunConfig {
    std::string run_id = "run";
    std::string mode = "DG";
    std::vector<std::string> domains = {"A", "B", "C", "D"};
    std::string held_out = "D";
    long seeds = 5;
    long epochs = 50;
    long batch = 32;
    long train_per_domain = 600;
    long test_per_domain = 200;
    std::uint64_t data_seed = 7;

    double lr = 3e-3;
    double weight_decay = 1e-4;
    long lr_period = 100;  // halving period for the step schedule
    // When set, only the plug-in parameters train (host frozen) at low_rank_lr.
    bool low_rank_tuning = false;
    double low_rank_lr = 5e-4;

    bool attach = true;  // false runs the plain backbone baseline
    std::string prior = "loasp";
    std::string fusion = "loap";
    BlockConfig block;
};

inline void validate_run_config(const RunConfig& cfg) {
    if (cfg.run_id.empty()) throw ConfigError("validate_run_config: empty run_id");
    if (cfg.batch < 2)
        throw ConfigError("validate_run_config: batch must be at least 2 (batch norm needs more "
                          "than one value per channel), got " +
                          std::to_string(cfg.batch));
    if (cfg.epochs < 0) throw ConfigError("validate_run_config: negative epoch count");
    if (cfg.seeds < 1) throw ConfigError("validate_run_config: need at least one seed");
    if (cfg.train_per_domain < 1 || cfg.test_per_domain < 1)
        throw ConfigError("validate_run_config: per-domain sample counts must be positive");
    if (cfg.lr_period < 1) throw ConfigError("validate_run_config: lr_period must be positive");
    if (cfg.low_rank_tuning && !cfg.attach)
        throw ConfigError("validate_run_config: low-rank tuning without an attached plug-in "
                          "leaves nothing to train");
    for (const std::string& d : cfg.domains) (void)builtin_domain(d);
    (void)build_protocol(cfg.domains, cfg.mode, cfg.held_out);
}

struct EvalResult {
    double acc = 0.0;
    double f1 = 0.0;
    double auc = 0.0;
};

struct SeedRunResult {
    long seed = 0;
    std::vector<double> epoch_losses;
    EvalResult train_eval;
    std::vector<std::pair<std::string, EvalResult>> test_evals;
};

struct RunResult {
    Protocol protocol;
    std::vector<SeedRunResult> seeds;
    std::string metrics_csv;
    std::string loss_csv;
    double mean_test_acc = 0.0;  // over seeds and test domains
};

namespace detail {

// Disjoint seed-index ranges per domain ordinal and split, so no two dataset
// entries anywhere in a run share their anatomy.
constexpr long kDomainIndexStride = 10000000;
constexpr long kTestIndexOffset = 5000000;

inline std::vector<SyntheticSample> domain_split(const RunConfig& cfg, const std::string& id,
                                                 bool test_split) {
    long ordinal = -1;
    for (std::size_t i = 0; i < cfg.domains.size(); ++i)
        if (cfg.domains[i] == id) ordinal = static_cast<long>(i);
    if (ordinal < 0) throw ConfigError("domain_split: domain '" + id + "' is not in the config");
    long first = ordinal * kDomainIndexStride + (test_split ? kTestIndexOffset : 0);
    long count = test_split ? cfg.test_per_domain : cfg.train_per_domain;
    return generate_dataset(cfg.data_seed, builtin_domain(id), count, first);
}

inline EvalResult evaluate_split(const ToyBackbone& net, const std::vector<SyntheticSample>& samples) {
    if (samples.empty()) throw ContractError("evaluate_split: empty sample list");
    NoGradGuard guard;
    const long n = static_cast<long>(samples.size());
    const long classes = ToyBackbone::kNumClasses;
    std::vector<long> labels(static_cast<std::size_t>(n));
    std::vector<long> preds(static_cast<std::size_t>(n));
    std::vector<double> scores(static_cast<std::size_t>(n * classes));
    const long chunk = 64;
    for (long at = 0; at < n; at += chunk) {
        long take = std::min(chunk, n - at);
        std::vector<std::size_t> idx(static_cast<std::size_t>(take));
        for (long i = 0; i < take; ++i) idx[static_cast<std::size_t>(i)] = static_cast<std::size_t>(at + i);
        Tensor logits = net.forward(batch_images(samples, idx), false);
        const double* p = logits.data();
        for (long i = 0; i < take; ++i) {
            long row = at + i;
            labels[static_cast<std::size_t>(row)] = samples[static_cast<std::size_t>(row)].grade;
            // softmax per row; the shift makes the exponentials safe
            double hi = p[i * classes];
            for (long c = 1; c < classes; ++c) hi = std::max(hi, p[i * classes + c]);
            double z = 0.0;
            for (long c = 0; c < classes; ++c) z += std::exp(p[i * classes + c] - hi);
            long best = 0;
            for (long c = 0; c < classes; ++c) {
                scores[static_cast<std::size_t>(row * classes + c)] =
                    std::exp(p[i * classes + c] - hi) / z;
                if (p[i * classes + c] > p[i * classes + best]) best = c;
            }
            preds[static_cast<std::size_t>(row)] = best;
        }
    }
    EvalResult r;
    r.acc = accuracy(preds, labels);
    r.f1 = macro_f1(preds, labels);
    r.auc = macro_auc(scores, labels, classes, &std::cerr);
    return r;
}

inline std::string format_metrics_row(const RunConfig& cfg, const Protocol& proto, long seed,
                                      long epoch, const std::string& split, const EvalResult& e) {
    char buf[256];
    std::snprintf(buf, sizeof buf, "%s,%ld,%s,%s,%ld,%s,%.6f,%.6f,%.6f\n", cfg.run_id.c_str(), seed,
                  proto.mode.c_str(), proto.held_out.c_str(), epoch, split.c_str(), e.acc, e.f1,
                  e.auc);
    return buf;
}

}  // namespace detail

// Fresh model for one run seed: the host init stream depends only on the seed,
// so the plain baseline and every wrapped variant start from bitwise identical
// host weights and the comparison is paired.
inline ToyBackbone build_model(const RunConfig& cfg, long seed) {
    Rng model_rng(splitmix64_finalize(0x6d6f64656cULL ^ (static_cast<std::uint64_t>(seed) << 1)));
    ToyBackbone net(model_rng);
    if (cfg.attach) {
        Rng attach_rng(splitmix64_finalize(0x617474616368ULL ^ (static_cast<std::uint64_t>(seed) << 1)));
        net.attach_all_named(cfg.prior, cfg.fusion, cfg.block, attach_rng);
    }
    return net;
}

// With low-rank tuning only the plug-in parameters train; the host is frozen.
inline ParamList select_trained(const ToyBackbone& net, const RunConfig& cfg) {
    ParamList all;
    net.collect_params(all);
    if (!cfg.low_rank_tuning) return all;
    ParamList kept;
    for (const auto& p : all)
        if (p.name.find(".plug.") != std::string::npos) kept.push_back(p);
    if (kept.empty())
        throw ConfigError("select_trained: low-rank tuning found no plug-in parameters");
    return kept;
}

// Trains the given model for one seed and returns its losses and final
// metrics. Training pools every train-domain sample and reshuffles each epoch;
// trailing batches of a single sample are skipped because batch norm cannot
// see them.
inline SeedRunResult run_seed(const RunConfig& cfg, const Protocol& proto, long seed,
                              ToyBackbone& net, const std::vector<SyntheticSample>& train_pool,
                              const std::vector<std::vector<SyntheticSample>>& test_sets) {
    AdamW opt(select_trained(net, cfg));
    opt.weight_decay = cfg.weight_decay;
    double base_lr = cfg.low_rank_tuning ? cfg.low_rank_lr : cfg.lr;

    Rng shuffle_rng(splitmix64_finalize(cfg.data_seed ^ (0x73687566ULL + static_cast<std::uint64_t>(seed))));
    std::vector<std::size_t> order(train_pool.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    SeedRunResult result;
    result.seed = seed;
    for (long epoch = 0; epoch < cfg.epochs; ++epoch) {
        opt.lr = step_lr(epoch, base_lr, cfg.lr_period);
        for (std::size_t i = order.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(shuffle_rng.next_below(i));
            std::swap(order[i - 1], order[j]);
        }
        double loss_sum = 0.0;
        long batches = 0;
        for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch)) {
            std::size_t take = std::min(static_cast<std::size_t>(cfg.batch), order.size() - at);
            if (take < 2) break;
            std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(at),
                                         order.begin() + static_cast<std::ptrdiff_t>(at + take));
            std::vector<long> labels(take);
            for (std::size_t i = 0; i < take; ++i) labels[i] = train_pool[idx[i]].grade;
            try {
                Tensor loss = cross_entropy(net.forward(batch_images(train_pool, idx), true), labels);
                if (!std::isfinite(loss.data()[0]))
                    throw NumericError("loss is not finite");
                opt.zero_grad();
                backward(loss);
                opt.step();
                loss_sum += loss.data()[0];
            } catch (const NumericError& e) {
                throw NumericError("run_seed: aborted at epoch " + std::to_string(epoch) +
                                   ", batch " + std::to_string(batches) + ": " + e.what());
            }
            ++batches;
        }
        if (batches == 0)
            throw ConfigError("run_seed: training pool of " + std::to_string(order.size()) +
                              " samples yields no batch of at least 2");
        result.epoch_losses.push_back(loss_sum / static_cast<double>(batches));
    }

    result.train_eval = detail::evaluate_split(net, train_pool);
    for (std::size_t t = 0; t < test_sets.size(); ++t)
        result.test_evals.emplace_back(proto.test_domains[t],
                                       detail::evaluate_split(net, test_sets[t]));
    return result;
}

// on_seed, when set, receives each trained model before it is discarded so
// callers can checkpoint or inspect it without rerunning the seed.
inline RunResult run_experiment(const RunConfig& cfg,
                                const std::function<void(long, const ToyBackbone&)>& on_seed = {}) {
    validate_run_config(cfg);
    Protocol proto = build_protocol(cfg.domains, cfg.mode, cfg.held_out);

    std::vector<SyntheticSample> train_pool;
    for (const std::string& d : proto.train_domains) {
        std::vector<SyntheticSample> part = detail::domain_split(cfg, d, false);
        train_pool.insert(train_pool.end(), part.begin(), part.end());
    }
    std::vector<std::vector<SyntheticSample>> test_sets;
    for (const std::string& d : proto.test_domains)
        test_sets.push_back(detail::domain_split(cfg, d, true));

    RunResult out;
    out.protocol = proto;
    out.metrics_csv = "run_id,seed,protocol,held_out,epoch,split,acc,macro_f1,macro_auc\n";
    out.loss_csv = "run_id,seed,epoch,mean_loss\n";
    double acc_sum = 0.0;
    long acc_count = 0;
    for (long seed = 0; seed < cfg.seeds; ++seed) {
        ToyBackbone net = build_model(cfg, seed);
        SeedRunResult r = run_seed(cfg, proto, seed, net, train_pool, test_sets);
        if (on_seed) on_seed(seed, net);
        for (std::size_t e = 0; e < r.epoch_losses.size(); ++e) {
            char buf[128];
            std::snprintf(buf, sizeof buf, "%s,%ld,%zu,%.6f\n", cfg.run_id.c_str(), seed, e,
                          r.epoch_losses[e]);
            out.loss_csv += buf;
        }
        out.metrics_csv +=
            detail::format_metrics_row(cfg, proto, seed, cfg.epochs, "train", r.train_eval);
        for (const auto& te : r.test_evals) {
            out.metrics_csv += detail::format_metrics_row(cfg, proto, seed, cfg.epochs,
                                                          "test:" + te.first, te.second);
            acc_sum += te.second.acc;
            ++acc_count;
        }
        out.seeds.push_back(std::move(r));
    }
    out.mean_test_acc = acc_sum / static_cast<double>(acc_count);
    return out;
}

}  // namespace loasp
