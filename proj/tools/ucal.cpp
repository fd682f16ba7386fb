// ucal: run the active clustering loop, evaluate a saved state, or generate synthetic data.

#include <chrono>
#include <exception>
#include <filesystem>
#include <iostream>
#include <memory>
#include <string>

#include <CLI11.hpp>

#include "ucal/dataset.hpp"
#include "ucal/engine.hpp"
#include "ucal/service.hpp"
#include "ucal/synth.hpp"

namespace {

int run_command(ucal::RunConfig cfg, const std::string& oracle, const std::string& host, int port) {
    cfg.oracle_mode = ucal::parse_oracle_mode(oracle);
    cfg.validate();
    auto         dataset = ucal::load_dataset_dir(cfg.data_dir);
    ucal::Engine engine(cfg, std::move(dataset));

    std::unique_ptr<ucal::AnnotationService> service;
    if (cfg.oracle_mode == ucal::OracleMode::Human) {
        ucal::ServiceOptions opts;
        opts.host       = host;
        opts.port       = port;
        opts.static_dir = cfg.data_dir;
        service         = std::make_unique<ucal::AnnotationService>(engine, opts);
        const int bound = service->start();
        std::cerr << "annotation service listening on http://" << host << ":" << bound << "/api/v1\n";
    }

    const auto report = engine.run();
    for (const auto& e : report.epochs) {
        std::cout << "epoch " << e.epoch << "  clusters " << e.n_clusters << "  outliers " << e.n_outliers
                  << "  queries " << e.queries_issued << "  M " << e.cumulative_m << "  f1 " << e.pairwise_f1
                  << "  nmi " << e.nmi << "\n";
    }
    std::cout << "final M " << report.final_m << "  cost " << report.final_cost << "%\n";
    return 0;
}

int eval_command(const std::filesystem::path& state_path, const std::filesystem::path& data_dir) {
    const auto dataset = ucal::load_dataset_dir(data_dir);
    const auto state   = ucal::load_state(state_path);
    const auto m       = ucal::evaluate_state(state, dataset);
    auto       out     = m.to_json();
    out.erase("queries_issued");
    out.erase("cumulative_M");
    out.erase("cost_percent");
    out.erase("mean_loss");
    std::cout << out.dump(2) << "\n";
    return 0;
}

int synth_command(const ucal::SynthConfig& cfg, const std::filesystem::path& out) {
    const auto bundle = ucal::make_synthetic(cfg);
    ucal::write_dataset(bundle, out);
    std::cout << "wrote " << bundle.size() << " samples (" << cfg.identities << " identities, dim " << cfg.dim
              << ") to " << out.string() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Active clustering with pairwise centroid annotation"};
    app.require_subcommand(1);

    ucal::RunConfig cfg;
    std::string     data_dir, out_dir, oracle = "simulated", host = "127.0.0.1";
    int             port          = 8080;
    double          label_timeout = 600.0;
    bool            no_snps = false, no_mpps = false, no_negative = false;

    auto* run = app.add_subcommand("run", "Run the active clustering loop");
    run->add_option("--data", data_dir, "Dataset directory (embeddings.csv + meta.jsonl)")->required();
    run->add_option("--eps", cfg.eps, "DBSCAN cosine-distance radius")->required();
    run->add_option("--min-pts", cfg.min_pts, "DBSCAN core threshold (counts the point itself)")->required();
    run->add_option("--tau", cfg.tau, "Contrastive temperature")->capture_default_str();
    run->add_option("--lr", cfg.learning_rate, "Head learning rate")->capture_default_str();
    run->add_option("--output-dim", cfg.output_dim, "Head output dimension (0: input dimension)")->capture_default_str();
    run->add_option("--batch-size", cfg.batch_size, "Refinement batch size")->capture_default_str();
    run->add_option("--delta", cfg.delta, "Normalized gap threshold for merge queries")->capture_default_str();
    run->add_option("--merge-cap", cfg.merge_cap_fraction, "Max merges per epoch as a fraction of clusters")
        ->capture_default_str();
    run->add_option("--l-max", cfg.l_max, "Rank list length for merge proposals")->capture_default_str();
    run->add_option("--warmup", cfg.warmup_epochs, "Epochs without queries")->capture_default_str();
    run->add_option("--epochs", cfg.total_epochs, "Total epochs")->capture_default_str();
    run->add_option("--seed", cfg.seed, "Random seed")->capture_default_str();
    run->add_option("--oracle", oracle, "simulated|human")->check(CLI::IsMember({"simulated", "human"}))
        ->capture_default_str();
    run->add_option("--out", out_dir, "Output directory for metrics.jsonl, labels.jsonl, state.json")->required();
    run->add_flag("--no-snps", no_snps, "Disable split proposals");
    run->add_flag("--no-mpps", no_mpps, "Disable merge proposals");
    run->add_flag("--no-negative-propagation", no_negative, "Only reuse exact and transitive-positive labels");
    run->add_option("--host", host, "Annotation service host (human mode)")->capture_default_str();
    run->add_option("--port", port, "Annotation service port (human mode)")->capture_default_str();
    run->add_option("--label-timeout", label_timeout, "Seconds to wait for human labels per phase")
        ->capture_default_str();

    std::string state_path, eval_data;
    auto*       eval = app.add_subcommand("eval", "Score a saved cluster state against ground truth");
    eval->add_option("--state", state_path, "state.json written by run")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();

    ucal::SynthConfig synth_cfg;
    std::string       synth_out;
    auto*             synth = app.add_subcommand("synth", "Generate a synthetic identity dataset");
    synth->add_option("--identities", synth_cfg.identities)->required();
    synth->add_option("--per-id", synth_cfg.per_id)->required();
    synth->add_option("--dim", synth_cfg.dim)->required();
    synth->add_option("--noise", synth_cfg.noise, "Per-coordinate noise standard deviation")->required();
    synth->add_option("--seed", synth_cfg.seed)->capture_default_str();
    synth->add_option("--out", synth_out)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*run) {
            cfg.data_dir             = data_dir;
            cfg.out_dir              = out_dir;
            cfg.enable_snps          = !no_snps;
            cfg.enable_mpps          = !no_mpps;
            cfg.negative_propagation = !no_negative;
            cfg.label_timeout        = std::chrono::milliseconds(static_cast<long long>(label_timeout * 1000.0));
            return run_command(cfg, oracle, host, port);
        }
        if (*eval) return eval_command(state_path, eval_data);
        if (*synth) return synth_command(synth_cfg, synth_out);
    } catch (const std::exception& e) {
        std::cerr << "ucal: error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
