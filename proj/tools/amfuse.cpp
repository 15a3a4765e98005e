// amfuse: train / fuse / eval / rank / gradcheck pipeline driver.

#include <CLI11.hpp>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include "amfusion/amfw.hpp"
#include "amfusion/config.hpp"
#include "amfusion/dataio.hpp"
#include "amfusion/fusion.hpp"
#include "amfusion/gradcheck.hpp"
#include "amfusion/losses.hpp"
#include "amfusion/metrics.hpp"
#include "amfusion/nn.hpp"
#include "amfusion/training.hpp"

namespace {

using namespace amfusion;

struct CommonOverrides {
    // CLI flags that override config-file values; unset flags keep defaults
    std::string config_path;
    std::vector<std::string> kv;  // key=value overrides
};

PipelineConfig resolve_config(const CommonOverrides& o) {
    PipelineConfig cfg;
    if (!o.config_path.empty()) cfg = load_config(o.config_path);
    int pseudo_line = 0;
    for (const auto& item : o.kv) {
        ++pseudo_line;
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("--set expects key=value, got '" + item + "'");
        cfg.apply(item.substr(0, eq), item.substr(eq + 1), pseudo_line);
    }
    return cfg;
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

int run_train(const CommonOverrides& o, const std::string& ir_dir,
              const std::string& vis_dir, const std::string& out_path,
              const std::string& trace_path) {
    PipelineConfig cfg = resolve_config(o);
    cfg.train.checkpoint_path = out_path;

    PairListing listing = discover_pairs(ir_dir, vis_dir);
    for (const auto& w : listing.unmatched)
        std::cerr << "warning: unmatched image " << w << "\n";
    if (listing.pairs.empty()) throw IoError("no image pairs found for training");

    std::vector<Tensor> images;
    for (const auto& p : listing.pairs) {
        images.push_back(preprocess(load_gray(p.ir_path), cfg.train.side));
        images.push_back(preprocess(load_gray(p.vis_path), cfg.train.side));
    }
    TrainResult result = train(images, cfg.train);
    if (!trace_path.empty()) {
        std::ofstream trace(trace_path);
        if (!trace) throw IoError("cannot write " + trace_path);
        write_loss_trace(result.trace, trace);
    } else {
        write_loss_trace(result.trace, std::cout);
    }
    std::cerr << "model written to " << out_path << "\n";
    return 0;
}

int run_fuse(const std::string& model_path, const std::string& ir_path,
             const std::string& vis_path, const std::string& strategy,
             const std::string& out_path, bool no_attention) {
    ModelParams params = amfw::load(model_path);
    GrayImageU8 ir = load_gray(ir_path);
    GrayImageU8 vis = load_gray(vis_path);
    if (ir.width != vis.width || ir.height != vis.height)
        throw ShapeError("ir and vis images differ in size");
    const int side = std::min(ir.width, ir.height);
    Tensor t_ir = preprocess(ir, side);
    Tensor t_vis = preprocess(vis, side);
    Tensor fused = fuse_forward(t_ir, t_vis, params, parse_strategy(strategy),
                                !no_attention);
    fused.check_finite("fused output");
    save_gray(fused, out_path);
    return 0;
}

int run_eval(const std::string& ir_dir, const std::string& vis_dir,
             const std::string& fused_dir, const std::string& out_path) {
    PairListing listing = discover_pairs(ir_dir, vis_dir);
    for (const auto& w : listing.unmatched)
        std::cerr << "warning: unmatched image " << w << "\n";
    if (listing.pairs.empty()) throw IoError("no image pairs found");

    namespace fs = std::filesystem;
    struct Item {
        std::string id, ir, vis, fused;
    };
    std::vector<Item> items;
    for (const auto& p : listing.pairs) {
        std::string fused;
        for (const char* ext : {".png", ".pgm"}) {
            const fs::path cand = fs::path(fused_dir) / (p.id + ext);
            if (fs::exists(cand)) { fused = cand.string(); break; }
        }
        if (fused.empty()) {
            std::cerr << "warning: no fused image for pair " << p.id << "\n";
            continue;
        }
        items.push_back({p.id, p.ir_path, p.vis_path, fused});
    }
    if (items.empty()) throw IoError("no evaluable pairs in " + fused_dir);

    unsigned threads = std::thread::hardware_concurrency();
    if (const char* env = std::getenv("AMFUSE_THREADS")) {
        const int t = std::atoi(env);
        if (t >= 1) threads = static_cast<unsigned>(t);
    }
    threads = std::min<unsigned>(std::max(threads, 1u),
                                 static_cast<unsigned>(items.size()));

    std::vector<metrics::MetricRow> rows(items.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next.fetch_add(1); i < items.size(); i = next.fetch_add(1)) {
            const GrayImageU8 a = load_gray(items[i].ir);
            const GrayImageU8 b = load_gray(items[i].vis);
            const GrayImageU8 f = load_gray(items[i].fused);
            rows[i] = metrics::evaluate_pair(a, b, f);
        }
    };
    std::vector<std::thread> pool;
    for (unsigned t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << "pair";
    for (const char* n : metrics::kMetricNames) out << "," << n;
    out << "\n";
    metrics::MetricRow mean{};
    char buf[64];
    for (std::size_t i = 0; i < items.size(); ++i) {
        out << items[i].id;
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            std::snprintf(buf, sizeof(buf), ",%.6f", rows[i][j]);
            out << buf;
            mean[j] += rows[i][j];
        }
        out << "\n";
    }
    out << "mean";
    for (double m : mean) {
        std::snprintf(buf, sizeof(buf), ",%.6f", m / static_cast<double>(items.size()));
        out << buf;
    }
    out << "\n";
    return 0;
}

metrics::MetricRow read_report_mean(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path);
    std::string line, mean_line;
    std::getline(in, line);  // header
    if (line.rfind("pair,", 0) != 0)
        throw IoError(path + ": not a metric report (bad header)");
    while (std::getline(in, line))
        if (line.rfind("mean,", 0) == 0) mean_line = line;
    if (mean_line.empty()) throw IoError(path + ": no mean row");
    const auto fields = split_csv(mean_line);
    if (fields.size() != 10) throw IoError(path + ": malformed mean row");
    metrics::MetricRow row;
    for (std::size_t j = 0; j < 9; ++j) row[j] = std::stod(fields[j + 1]);
    return row;
}

int run_rank(const std::string& reports, const std::string& names,
             const std::string& out_path) {
    const auto report_list = split_csv(reports);
    const auto name_list = split_csv(names);
    if (report_list.size() != name_list.size())
        throw ConfigError("--reports and --names must have the same count");
    std::map<std::string, metrics::MetricRow> table;
    for (std::size_t i = 0; i < report_list.size(); ++i)
        table[name_list[i]] = read_report_mean(report_list[i]);
    const auto xi = metrics::normalized_index(table);

    std::ofstream out(out_path);
    if (!out) throw IoError("cannot write " + out_path);
    out << "method";
    for (const char* n : metrics::kMetricNames) out << "," << n;
    out << ",xi\n";
    char buf[64];
    for (const auto& [name, row] : table) {
        out << name;
        for (double v : row) {
            std::snprintf(buf, sizeof(buf), ",%.6f", v);
            out << buf;
        }
        std::snprintf(buf, sizeof(buf), ",%.4f", xi.at(name));
        out << buf << "\n";
    }
    // aligned text table on stdout
    std::printf("%-16s", "method");
    for (const char* n : metrics::kMetricNames) std::printf("%10s", n);
    std::printf("%10s\n", "xi");
    for (const auto& [name, row] : table) {
        std::printf("%-16s", name.c_str());
        for (double v : row) std::printf("%10.4f", v);
        std::printf("%10.4f\n", xi.at(name));
    }
    return 0;
}

int run_gradcheck(std::uint64_t seed) {
    const auto results = gradcheck_suite(seed);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("%-24s worst rel err %.3e  %s\n", r.op.c_str(), r.worst_rel_err,
                    r.passed ? "ok" : "FAIL");
        ok = ok && r.passed;
    }
    return ok ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"AMFusionNet infrared/visible image fusion pipeline"};
    app.require_subcommand(1);

    CommonOverrides common;

    auto* train_cmd = app.add_subcommand("train", "train the autoencoder on image pairs");
    std::string ir_dir, vis_dir, out_path = "model.amfw", trace_path;
    train_cmd->add_option("--config", common.config_path, "key = value config file");
    train_cmd->add_option("--set", common.kv, "override a config key (key=value)");
    train_cmd->add_option("--ir-dir", ir_dir, "infrared image directory")->required();
    train_cmd->add_option("--vis-dir", vis_dir, "visible image directory")->required();
    train_cmd->add_option("--out", out_path, "output AMFW model path");
    train_cmd->add_option("--trace", trace_path, "loss trace CSV path (default stdout)");

    auto* fuse_cmd = app.add_subcommand("fuse", "fuse one IR/VIS image pair");
    std::string model_path, ir_path, vis_path, strategy = "l1", fuse_out = "fused.png";
    bool no_attention = false;
    fuse_cmd->add_option("--model", model_path, "AMFW model file")->required();
    fuse_cmd->add_option("--ir", ir_path, "infrared image")->required();
    fuse_cmd->add_option("--vis", vis_path, "visible image")->required();
    fuse_cmd->add_option("--strategy", strategy, "fusion strategy: avg|l1|mean")
        ->check(CLI::IsMember({"avg", "l1", "mean"}));
    fuse_cmd->add_option("--out", fuse_out, "output image path");
    fuse_cmd->add_flag("--no-attention", no_attention, "bypass the attention branch");

    auto* eval_cmd = app.add_subcommand("eval", "evaluate fused images against sources");
    std::string fused_dir, report_out = "report.csv";
    eval_cmd->add_option("--ir-dir", ir_dir, "infrared image directory")->required();
    eval_cmd->add_option("--vis-dir", vis_dir, "visible image directory")->required();
    eval_cmd->add_option("--fused-dir", fused_dir, "fused image directory")->required();
    eval_cmd->add_option("--out", report_out, "output report CSV");

    auto* rank_cmd = app.add_subcommand("rank", "normalized-index ranking across methods");
    std::string reports, names, rank_out = "ranking.csv";
    rank_cmd->add_option("--reports", reports, "comma-separated report CSVs")->required();
    rank_cmd->add_option("--names", names, "comma-separated method names")->required();
    rank_cmd->add_option("--out", rank_out, "output ranking CSV");

    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::uint64_t gc_seed = 1;
    grad_cmd->add_option("--seed", gc_seed, "base seed for random tensors");

    CLI11_PARSE(app, argc, argv);

    try {
        if (app.got_subcommand(train_cmd))
            return run_train(common, ir_dir, vis_dir, out_path, trace_path);
        if (app.got_subcommand(fuse_cmd))
            return run_fuse(model_path, ir_path, vis_path, strategy, fuse_out, no_attention);
        if (app.got_subcommand(eval_cmd))
            return run_eval(ir_dir, vis_dir, fused_dir, report_out);
        if (app.got_subcommand(rank_cmd)) return run_rank(reports, names, rank_out);
        if (app.got_subcommand(grad_cmd)) return run_gradcheck(gc_seed);
    } catch (const ConfigError& e) {
        std::cerr << "error: config: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "error: io: " << e.what() << "\n";
        return 3;
    } catch (const ShapeError& e) {
        std::cerr << "error: shape: " << e.what() << "\n";
        return 4;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return 5;
    }
    return 1;
}
