// Command-line front end. One verb per process; every output is a flat file
// (CSV, PPM, LODG1 shards, checkpoints) under the --out root so runs can be
// diffed byte for byte.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "loasp/accounting.hpp"
#include "loasp/checkpoint.hpp"
#include "loasp/config.hpp"
#include "loasp/harness.hpp"
#include "loasp/viz.hpp"

namespace fs = std::filesystem;

namespace {

struct Command {
    std::string verb;
    std::string config_path;
    std::string out_dir;
    std::vector<std::string> overrides;
    bool help = false;
};

const char* kGlobalUsage =
    "usage: loasp <verb> [--config FILE] [--out DIR] [key=value ...]\n"
    "\n"
    "verbs:\n"
    "  gen-data   write the configured synthetic domain shards (LODG1 files)\n"
    "  train      leave-one-domain-out training run, emits metrics/loss CSVs\n"
    "  eval       score a saved checkpoint on every domain's test shard\n"
    "  ablate     nine-cell prior x fusion sweep with a ranking summary\n"
    "  grid       one-at-a-time r/p/u sweep around the base configuration\n"
    "  count      parameter and FLOP accounting for the reference catalog\n"
    "  viz        render a block's structural prior map to a PPM image\n"
    "\n"
    "flags:\n"
    "  --config FILE   read 'key = value' lines (# comments) before overrides\n"
    "  --out DIR       output root (default $LOASP_OUT, then '.')\n"
    "  --help          this message, or verb details when a verb is named\n"
    "  key=value       override any config key\n"
    "\n"
    "exit codes: 0 success, 2 configuration error, 3 numeric failure\n";

std::string verb_usage(const std::string& verb) {
    std::string head = "usage: loasp " + verb + " [--config FILE] [--out DIR] [key=value ...]\n\n";
    if (verb == "gen-data")
        return head +
               "Writes train_<domain>.lodg and test_<domain>.lodg for every configured\n"
               "domain, byte-identical to the shards the trainer generates in memory.\n"
               "Keys: domains, train_per_domain, test_per_domain, data_seed.\n";
    if (verb == "train")
        return head +
               "Runs the configured protocol over all seeds, writing metrics.csv,\n"
               "loss.csv, and one checkpoint per seed under the output root.\n"
               "Keys: mode, domains, held_out, seeds, epochs, batch, lr, weight_decay,\n"
               "      attach, ablation.prior, ablation.fusion, loasp.r, low_rank_tuning.\n";
    if (verb == "eval")
        return head +
               "Restores 'checkpoint' into the configured model skeleton and scores it\n"
               "on every configured domain's test shard; CSV goes to stdout and eval.csv.\n"
               "Keys: checkpoint (required), domains, test_per_domain, data_seed.\n";
    if (verb == "ablate")
        return head +
               "Trains every prior x fusion cell ({lora,dsconv,loasp} x {add,adapter,loap})\n"
               "under the base configuration. Per-cell CSVs land in cells/, the summary in\n"
               "ablate.csv, and a mean-accuracy ranking on stdout.\n";
    if (verb == "grid")
        return head +
               "Sweeps loasp.r, spline.p, and spline.u one at a time around the base\n"
               "configuration (keys grid.r, grid.p, grid.u), one full train per value.\n"
               "Emits parameter,value,mean_test_acc rows to grid.csv and stdout.\n";
    if (verb == "count")
        return head +
               "Prints the per-component parameter and FLOP table for the reference\n"
               "catalog as CSV on stdout, writes count.csv, and totals on stderr.\n"
               "Keys: loasp.r, loasp.c_hidden, dsconv.k, spline.p, spline.u.\n";
    if (verb == "viz")
        return head +
               "Renders the structural prior map of one wrapped block for one synthetic\n"
               "image into prior_block<t>.ppm. A fresh model renders all white.\n"
               "Keys: viz.block, viz.sigma, viz.domain, viz.sample, viz.seed, checkpoint.\n";
    return head;
}

bool known_verb(const std::string& v) {
    return v == "gen-data" || v == "train" || v == "eval" || v == "ablate" || v == "grid" ||
           v == "count" || v == "viz";
}

Command parse_args(int argc, char** argv) {
    Command cmd;
    if (argc < 2) throw loasp::ConfigError("loasp: no verb given (try --help)");
    cmd.verb = argv[1];
    if (cmd.verb == "--help" || cmd.verb == "-h") {
        cmd.help = true;
        cmd.verb.clear();
        return cmd;
    }
    if (!known_verb(cmd.verb)) throw loasp::ConfigError("loasp: unknown verb '" + cmd.verb + "'");

    auto value_of = [&](int& i, const std::string& arg, const std::string& flag) {
        if (arg.size() > flag.size() && arg[flag.size()] == '=')
            return arg.substr(flag.size() + 1);
        if (i + 1 >= argc) throw loasp::ConfigError("loasp: flag " + flag + " needs a value");
        return std::string(argv[++i]);
    };
    for (int i = 2; i < argc; ++i) {
        std::string arg = argv[i];
        if (arg == "--help" || arg == "-h") {
            cmd.help = true;
        } else if (arg.rfind("--config", 0) == 0 && (arg.size() == 8 || arg[8] == '=')) {
            cmd.config_path = value_of(i, arg, "--config");
        } else if (arg.rfind("--out", 0) == 0 && (arg.size() == 5 || arg[5] == '=')) {
            cmd.out_dir = value_of(i, arg, "--out");
        } else if (!arg.empty() && arg[0] == '-') {
            throw loasp::ConfigError("loasp: unknown flag '" + arg + "'");
        } else if (arg.find('=') != std::string::npos) {
            cmd.overrides.push_back(arg);
        } else {
            throw loasp::ConfigError("loasp: expected a flag or key=value, got '" + arg + "'");
        }
    }
    return cmd;
}

std::string resolve_out_dir(const Command& cmd) {
    if (!cmd.out_dir.empty()) return cmd.out_dir;
    if (const char* env = std::getenv("LOASP_OUT"); env && *env) return env;
    return ".";
}

void write_text(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw loasp::ConfigError("loasp: cannot open " + path + " for writing");
    os.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!os) throw loasp::ConfigError("loasp: write to " + path + " failed");
}

std::string fmt6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

int run_gen_data(const loasp::Settings& s, const std::string& out) {
    loasp::validate_run_config(s.run);
    for (const std::string& id : s.run.domains) {
        for (bool test_split : {false, true}) {
            auto samples = loasp::detail::domain_split(s.run, id, test_split);
            std::string path =
                out + "/" + (test_split ? "test_" : "train_") + id + ".lodg";
            loasp::write_dataset(path, samples);
            std::cout << "wrote " << samples.size() << " samples to " << path << "\n";
        }
    }
    return 0;
}

int run_train(const loasp::Settings& s, const std::string& out) {
    loasp::RunResult res = loasp::run_experiment(
        s.run, [&](long seed, const loasp::ToyBackbone& net) {
            loasp::save_checkpoint(out + "/" + s.run.run_id + "_seed" + std::to_string(seed) +
                                       ".ckpt",
                                   net.state());
        });
    write_text(out + "/metrics.csv", res.metrics_csv);
    write_text(out + "/loss.csv", res.loss_csv);
    std::cout << "protocol " << s.run.mode << " held_out=" << res.protocol.held_out << "\n"
              << "mean_test_acc=" << fmt6(res.mean_test_acc) << "\n"
              << "wrote " << out << "/metrics.csv and " << out << "/loss.csv\n";
    return 0;
}

int run_eval(const loasp::Settings& s, const std::string& out) {
    if (s.checkpoint.empty())
        throw loasp::ConfigError("eval: set checkpoint=PATH to the model state to score");
    loasp::validate_run_config(s.run);
    loasp::ToyBackbone net = loasp::build_model(s.run, 0);
    loasp::restore_into(net.state(), loasp::load_checkpoint(s.checkpoint));
    std::string csv = "domain,acc,macro_f1,macro_auc\n";
    for (const std::string& id : s.run.domains) {
        auto samples = loasp::detail::domain_split(s.run, id, true);
        loasp::EvalResult ev = loasp::detail::evaluate_split(net, samples);
        csv += id + "," + fmt6(ev.acc) + "," + fmt6(ev.f1) + "," + fmt6(ev.auc) + "\n";
    }
    std::cout << csv;
    write_text(out + "/eval.csv", csv);
    return 0;
}

int run_ablate(const loasp::Settings& s, const std::string& out) {
    fs::create_directories(out + "/cells");
    std::string csv = "prior,fusion,mean_test_acc\n";
    std::vector<std::pair<std::string, double>> ranking;
    for (const char* prior : {"lora", "dsconv", "loasp"}) {
        for (const char* fusion : {"add", "adapter", "loap"}) {
            loasp::RunConfig cell = s.run;
            cell.attach = true;
            cell.prior = prior;
            cell.fusion = fusion;
            cell.run_id = std::string(prior) + "-" + fusion;
            loasp::RunResult res = loasp::run_experiment(cell);
            write_text(out + "/cells/" + cell.run_id + ".metrics.csv", res.metrics_csv);
            csv += std::string(prior) + "," + fusion + "," + fmt6(res.mean_test_acc) + "\n";
            ranking.emplace_back(cell.run_id, res.mean_test_acc);
            std::cout << "cell " << cell.run_id << " mean_test_acc=" << fmt6(res.mean_test_acc)
                      << "\n";
        }
    }
    write_text(out + "/ablate.csv", csv);
    std::stable_sort(ranking.begin(), ranking.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    std::cout << "ranking:\n";
    for (std::size_t i = 0; i < ranking.size(); ++i)
        std::cout << "  " << i + 1 << ". " << ranking[i].first << " "
                  << fmt6(ranking[i].second) << "\n";
    return 0;
}

int run_grid(const loasp::Settings& s, const std::string& out) {
    std::string csv = "parameter,value,mean_test_acc\n";
    auto sweep = [&](const char* name, const std::vector<long>& values,
                     void (*apply)(loasp::RunConfig&, long)) {
        for (long v : values) {
            loasp::RunConfig cfg = s.run;
            apply(cfg, v);
            cfg.run_id = std::string(name) + std::to_string(v);
            loasp::RunResult res = loasp::run_experiment(cfg);
            csv += std::string(name) + "," + std::to_string(v) + "," +
                   fmt6(res.mean_test_acc) + "\n";
            std::cout << name << "=" << v << " mean_test_acc=" << fmt6(res.mean_test_acc)
                      << "\n";
        }
    };
    sweep("r", s.grid.r_values, [](loasp::RunConfig& c, long v) { c.block.r = v; });
    sweep("p", s.grid.p_values,
          [](loasp::RunConfig& c, long v) { c.block.spline_p = static_cast<int>(v); });
    sweep("u", s.grid.u_values,
          [](loasp::RunConfig& c, long v) { c.block.spline_u = static_cast<int>(v); });
    write_text(out + "/grid.csv", csv);
    return 0;
}

int run_count(const loasp::Settings& s, const std::string& out) {
    loasp::CostReport report =
        loasp::count_added_params(loasp::resnet50_catalog(), s.run.block);
    std::ostringstream csv;
    loasp::write_cost_csv(report, csv);
    std::cout << csv.str();
    write_text(out + "/count.csv", csv.str());
    std::cerr << "total added parameters: " << report.params_total << "\n"
              << "total branch flops (fine-grained): " << report.flops_total << "\n"
              << "total branch flops (aggregate bound): " << report.flops_bound_total << "\n"
              << "baseline full-resolution conv flops: " << report.baseline_total << "\n";
    return 0;
}

int run_viz(const loasp::Settings& s, const std::string& out) {
    loasp::validate_run_config(s.run);
    loasp::SyntheticSample sample = loasp::generate_sample(
        s.run.data_seed, s.viz.sample, loasp::builtin_domain(s.viz.domain));
    loasp::ToyBackbone net = loasp::build_model(s.run, s.viz.seed);
    if (!s.checkpoint.empty())
        loasp::restore_into(net.state(), loasp::load_checkpoint(s.checkpoint));
    loasp::Tensor x = loasp::batch_images({sample}, {0});
    loasp::Tensor map = loasp::extract_prior_map(net, x, s.viz.block);
    map = loasp::gaussian_filter(map, s.viz.sigma);
    loasp::RgbImage img = loasp::colorize(map);
    std::string path = out + "/prior_block" + std::to_string(s.viz.block) + ".ppm";
    loasp::write_ppm(path, img);
    std::cout << "wrote " << path << " (" << img.w << "x" << img.h << ")\n";
    return 0;
}

int dispatch(const Command& cmd) {
    if (cmd.help || cmd.verb.empty()) {
        std::cout << (cmd.verb.empty() ? kGlobalUsage : verb_usage(cmd.verb));
        return 0;
    }
    loasp::Settings s = loasp::load_settings(cmd.config_path, cmd.overrides);
    std::string out = resolve_out_dir(cmd);
    fs::create_directories(out);
    if (cmd.verb == "gen-data") return run_gen_data(s, out);
    if (cmd.verb == "train") return run_train(s, out);
    if (cmd.verb == "eval") return run_eval(s, out);
    if (cmd.verb == "ablate") return run_ablate(s, out);
    if (cmd.verb == "grid") return run_grid(s, out);
    if (cmd.verb == "count") return run_count(s, out);
    return run_viz(s, out);
}

}  // namespace

int main(int argc, char** argv) {
    try {
        return dispatch(parse_args(argc, argv));
    } catch (const loasp::ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const loasp::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}
