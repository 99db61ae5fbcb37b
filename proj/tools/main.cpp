// Streaming tensor compression front end: ingests batch containers in
// order, maintains a persisted batch hierarchical Tucker state, and emits
// per-update statistics.

#include <CLI11.hpp>

#include <htrise/htrise.hpp>

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace htrise;

namespace {

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

Shape parse_extent_list(const std::string& text, const char* what) {
    Shape out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            out.push_back(std::stoll(item));
        } catch (const std::exception&) {
            throw std::runtime_error(std::string(what) + ": bad entry '" + item + "'");
        }
    }
    if (out.empty()) throw std::runtime_error(std::string(what) + ": empty list");
    return out;
}

std::vector<Index> parse_index_list(const std::string& text) {
    std::vector<Index> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        const auto dash = item.find('-', 1);
        if (dash != std::string::npos) {
            const Index a = std::stoll(item.substr(0, dash));
            const Index b = std::stoll(item.substr(dash + 1));
            for (Index i = a; i <= b; ++i) out.push_back(i);
        } else if (!item.empty()) {
            out.push_back(std::stoll(item));
        }
    }
    return out;
}

/// Input batches: explicit files stay in the given order, directories expand
/// to their *.bht entries sorted lexicographically.
std::vector<std::string> collect_inputs(const std::vector<std::string>& args) {
    std::vector<std::string> files;
    for (const std::string& a : args) {
        if (fs::is_directory(a)) {
            std::vector<std::string> entries;
            for (const auto& e : fs::directory_iterator(a)) {
                if (e.is_regular_file() && e.path().extension() == ".bht") {
                    entries.push_back(e.path().string());
                }
            }
            std::sort(entries.begin(), entries.end());
            files.insert(files.end(), entries.begin(), entries.end());
        } else {
            files.push_back(a);
        }
    }
    return files;
}

/// One compression run per state file.
class LockFile {
public:
    explicit LockFile(const std::string& state_path)
            : path_(state_path + ".lock") {
        fd_ = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
        if (fd_ < 0) {
            throw std::runtime_error("state is locked by another run (" + path_ +
                                     " exists; remove it if stale)");
        }
    }
    ~LockFile() {
        if (fd_ >= 0) {
            ::close(fd_);
            ::unlink(path_.c_str());
        }
    }
    LockFile(const LockFile&) = delete;
    LockFile& operator=(const LockFile&) = delete;

private:
    std::string path_;
    int fd_ = -1;
};

struct CompressConfig {
    double epsilon = 0.0;
    std::string normalize_method = "none";
    std::optional<Index> field_axis;
    std::string reshape_spec;
    std::string permute_spec;
    std::string state_path;
    std::string stats_path;
    std::string test_dir;
    Index rte_every = 5;
    bool adaptive_budget = false;
    bool no_timing = false;
    std::vector<std::string> inputs;
};

DenseTensor ingest(const DenseTensor& raw, const CompressConfig& cfg) {
    DenseTensor t = raw;
    if (!cfg.permute_spec.empty()) {
        Shape perm = parse_extent_list(cfg.permute_spec, "--permute");
        t = permute_axes(t, std::vector<Index>(perm.begin(), perm.end()));
    }
    if (!cfg.reshape_spec.empty()) {
        Shape target = parse_extent_list(cfg.reshape_spec, "--reshape");
        const Index batch = t.extent(t.order() - 1);
        if (shape_product(target) * batch != t.size()) {
            throw std::runtime_error(
                "--reshape: target " + shape_to_string(target) +
                " does not match the per-tensor element count");
        }
        target.push_back(batch);
        t = reshape(t, target);
    }
    return t;
}

std::vector<DenseTensor> load_test_set(const std::string& dir) {
    std::vector<DenseTensor> tensors;
    for (const std::string& f : collect_inputs({dir})) {
        DenseTensor batch = io::read_batch(f);
        const Index n = batch.extent(batch.order() - 1);
        Shape dims(batch.shape().begin(), batch.shape().end() - 1);
        for (Index m = 0; m < n; ++m) {
            tensors.push_back(reshape(slice(batch, batch.order() - 1, m, 1), dims));
        }
    }
    return tensors;
}

void append_stats_row(const std::string& path, bool fresh_file, Index batch_index,
                      Index n_tensors, bool skipped, double proj_error,
                      double eps_des, Index max_rank, Index total_params,
                      double cr, double rr, double seconds,
                      const std::optional<double>& rte) {
    std::ofstream out(path, fresh_file ? std::ios::trunc : std::ios::app);
    if (!out) throw std::runtime_error(path + ": cannot write stats");
    if (fresh_file) {
        out << "batch_index,n_tensors,skipped,proj_error,eps_des,max_rank,"
               "total_params,CR,RR,update_seconds,RTE\n";
    }
    out << batch_index << ',' << n_tensors << ',' << (skipped ? 1 : 0) << ','
        << fmt_double(proj_error) << ',' << fmt_double(eps_des) << ','
        << max_rank << ',' << total_params << ',' << fmt_double(cr) << ','
        << fmt_double(rr) << ',' << fmt_double(seconds) << ','
        << (rte ? fmt_double(*rte) : "") << '\n';
}

int cmd_compress(const CompressConfig& cfg) {
    const std::vector<std::string> inputs = collect_inputs(cfg.inputs);
    if (inputs.empty()) throw std::runtime_error("no input batches given");

    LockFile lock(cfg.state_path);

    io::RepresentationState state;
    bool have_state = fs::exists(cfg.state_path);
    if (have_state) {
        state = io::read_state(cfg.state_path);
        if (state.rep.epsilon_rel != cfg.epsilon) {
            throw std::runtime_error(
                "state was built with --epsilon " +
                fmt_double(state.rep.epsilon_rel) + ", got " +
                fmt_double(cfg.epsilon));
        }
        if (state.batches_processed >= static_cast<Index>(inputs.size())) {
            std::cout << "state already covers all " << inputs.size()
                      << " inputs; nothing to do\n";
            return 0;
        }
    }

    std::vector<DenseTensor> test_set;
    if (!cfg.test_dir.empty()) test_set = load_test_set(cfg.test_dir);

    const NormalizationMethod method = normalization_from_string(cfg.normalize_method);

    for (Index k = state.batches_processed; k < static_cast<Index>(inputs.size()); ++k) {
        const std::string& file = inputs[static_cast<std::size_t>(k)];
        DenseTensor y = ingest(io::read_batch(file), cfg);
        if (y.order() < 3) {
            throw std::runtime_error(file + ": need at least 2 dimensions plus batch");
        }
        if (cfg.field_axis && *cfg.field_axis >= y.order() - 1) {
            throw std::runtime_error("--field-axis must name a non-batch axis");
        }
        auto [scaled, params] = normalize(y, method, cfg.field_axis);

        const Index batch_index = k + 1;
        const Index n_tensors = scaled.extent(scaled.order() - 1);
        bool skipped = false;
        double proj_error = 0.0, eps_des = cfg.epsilon * frobenius_norm(scaled);
        double seconds = 0.0;

        if (!have_state) {
            Shape dims(scaled.shape().begin(), scaled.shape().end() - 1);
            const auto t0 = std::chrono::steady_clock::now();
            auto [rep, report] =
                bht_l2r(scaled, DimensionTree::balanced(static_cast<Index>(dims.size())),
                        cfg.epsilon, {.adaptive_budget = cfg.adaptive_budget});
            seconds = std::chrono::duration<double>(
                          std::chrono::steady_clock::now() - t0)
                          .count();
            state.rep = std::move(rep);
            proj_error = encode(state.rep, scaled).second;
            have_state = true;
        } else {
            Shape dims(scaled.shape().begin(), scaled.shape().end() - 1);
            if (dims != state.rep.dims) {
                throw std::runtime_error(
                    file + ": shape drift: batch is " + shape_to_string(dims) +
                    ", state expects " + shape_to_string(state.rep.dims));
            }
            auto [rep, update] = ht_rise_update(
                state.rep, scaled,
                {.epsilon_rel = cfg.epsilon, .adaptive_budget = cfg.adaptive_budget});
            state.rep = std::move(rep);
            skipped = update.skipped;
            proj_error = update.proj_error;
            eps_des = update.eps_des;
            seconds = update.seconds;
        }

        state.units.push_back({state.rep.accumulated - n_tensors + 1, n_tensors,
                               fs::path(file).filename().string(), params});
        state.batches_processed = batch_index;
        io::write_state(state, cfg.state_path);

        std::optional<double> rte;
        if (!test_set.empty() && cfg.rte_every > 0 && batch_index % cfg.rte_every == 0) {
            rte = relative_test_error(state.rep, test_set);
        }

        if (!cfg.stats_path.empty()) {
            const bool fresh_csv = batch_index == 1 || !fs::exists(cfg.stats_path);
            append_stats_row(cfg.stats_path, fresh_csv, batch_index,
                             n_tensors, skipped, proj_error, eps_des,
                             state.rep.max_rank(), state.rep.stored_elements(),
                             compression_ratio(state.rep),
                             reduction_ratio(state.rep),
                             cfg.no_timing ? 0.0 : seconds, rte);
        }

        std::cout << "batch " << batch_index << " (" << file << "): "
                  << (skipped ? "skip" : "update") << ", proj_error="
                  << fmt_double(proj_error) << ", stored="
                  << state.rep.stored_elements() << ", CR="
                  << fmt_double(compression_ratio(state.rep));
        if (rte) std::cout << ", RTE=" << fmt_double(*rte);
        std::cout << '\n';
    }
    return 0;
}

int cmd_decode(const std::string& state_path, const std::string& indices_spec,
               const std::string& latent_file, const std::string& out_path) {
    io::RepresentationState state = io::read_state(state_path);

    if (!latent_file.empty()) {
        DenseTensor raw = io::read_batch(latent_file);
        if (raw.order() != 3) {
            throw std::runtime_error(latent_file + ": latents must be 3-way");
        }
        LatentBatch latent = pad_latent({raw}, state.rep.root().extent(0),
                                        state.rep.root().extent(1));
        io::write_batch(decode(state.rep, latent), out_path);
        std::cout << "decoded " << raw.extent(2) << " latent slice(s) to "
                  << out_path << '\n';
        return 0;
    }

    std::vector<Index> indices = parse_index_list(indices_spec);
    if (indices.empty()) {
        std::cout << "no indices requested; nothing to decode\n";
        return 0;
    }

    auto unit_for = [&](Index m) -> const io::UnitRecord* {
        for (const io::UnitRecord& u : state.units) {
            if (m >= u.first && m < u.first + u.count) return &u;
        }
        return nullptr;
    };

    DenseTensor out;
    bool first = true;
    for (Index m : indices) {
        DenseTensor t = reconstruct_slice(state.rep, m);  // validates the range
        if (const io::UnitRecord* u = unit_for(m)) {
            t = denormalize(t, u->norm);
        }
        Shape s = t.shape();
        s.push_back(1);
        DenseTensor one = reshape(t, s);
        out = first ? one : concat(out, one, out.order() - 1);
        first = false;
    }
    io::write_batch(out, out_path);
    std::cout << "decoded " << indices.size() << " tensor(s) to " << out_path << '\n';
    return 0;
}

int cmd_inspect(const std::string& state_path, bool as_json) {
    io::RepresentationState state = io::read_state(state_path);
    const HTRepresentation& rep = state.rep;

    if (as_json) {
        nlohmann::json j;
        j["dims"] = rep.dims;
        j["depth"] = rep.tree.depth();
        j["node_count"] = rep.tree.node_count();
        j["accumulated"] = rep.accumulated;
        j["batches_processed"] = state.batches_processed;
        j["epsilon_rel"] = rep.epsilon_rel;
        j["stored_elements"] = rep.stored_elements();
        j["compression_ratio"] = compression_ratio(rep);
        j["reduction_ratio"] = reduction_ratio(rep);
        nlohmann::json ranks = nlohmann::json::array();
        for (const auto& [id, r] : rep.ranks()) {
            ranks.push_back({{"layer", id.layer}, {"pos", id.pos}, {"rank", r}});
        }
        j["ranks"] = std::move(ranks);
        std::cout << j.dump(2) << '\n';
        return 0;
    }

    std::cout << "dimensions      : " << shape_to_string(rep.dims) << '\n'
              << "tree            : " << rep.tree.node_count() << " nodes, depth "
              << rep.tree.depth() << '\n'
              << "accumulated     : " << rep.accumulated << " tensors in "
              << state.batches_processed << " batches\n"
              << "epsilon_rel     : " << fmt_double(rep.epsilon_rel) << '\n'
              << "stored elements : " << rep.stored_elements() << '\n'
              << "compression     : " << fmt_double(compression_ratio(rep)) << '\n'
              << "reduction       : " << fmt_double(reduction_ratio(rep)) << '\n';
    for (Index l = 0; l <= rep.tree.depth(); ++l) {
        std::cout << "layer " << l << " :";
        for (const TreeNode& n : rep.tree.layer(l)) {
            std::cout << ' ' << shape_to_string(rep.core(n.id).shape());
            if (n.kind == NodeKind::Leaf) std::cout << "@dim" << n.leaf_dim;
        }
        std::cout << '\n';
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Streaming batch hierarchical Tucker compression"};
    app.require_subcommand(1);

    CompressConfig cfg;
    CLI::App* compress = app.add_subcommand(
        "compress", "Ingest batch files and update the persisted state");
    compress->add_option("inputs", cfg.inputs, "Batch files or directories")
        ->required();
    compress->add_option("--epsilon", cfg.epsilon, "Relative error tolerance")
        ->required()
        ->check(CLI::Range(std::nextafter(0.0, 1.0), std::nextafter(1.0, 0.0)));
    compress->add_option("--state", cfg.state_path, "State file path")->required();
    compress->add_option("--stats", cfg.stats_path, "Stats CSV path");
    compress
        ->add_option("--normalize", cfg.normalize_method,
                     "none | maxabs | unitvec | zscore")
        ->check(CLI::IsMember({"none", "maxabs", "unitvec", "zscore"}));
    compress->add_option("--field-axis", cfg.field_axis,
                         "Per-field normalization axis (0-based)");
    compress->add_option("--reshape", cfg.reshape_spec,
                         "Comma list of new leading extents (batch excluded)");
    compress->add_option("--permute", cfg.permute_spec,
                         "Comma list permutation of all file axes");
    compress->add_option("--test-dir", cfg.test_dir,
                         "Directory of held-out batches for RTE");
    compress->add_option("--rte-every", cfg.rte_every,
                         "Evaluate RTE every K batches (default 5)");
    compress->add_flag("--adaptive-budget", cfg.adaptive_budget,
                       "Re-spread the unused error budget over remaining SVDs");
    compress->add_flag("--no-timing", cfg.no_timing,
                       "Write zeros to the timing column (reproducible CSV)");

    std::string state_path, indices_spec, latent_file, out_path;
    CLI::App* dec = app.add_subcommand("decode", "Reconstruct stored tensors");
    dec->add_option("--state", state_path, "State file path")->required();
    dec->add_option("--indices", indices_spec,
                    "1-based tensor indices, e.g. 1,4,7-9");
    dec->add_option("--latent-file", latent_file,
                    "Decode an external latent batch container");
    dec->add_option("--out", out_path, "Output batch file")->required();

    std::string inspect_state;
    bool as_json = false;
    CLI::App* ins = app.add_subcommand("inspect", "Describe a state file");
    ins->add_option("--state", inspect_state, "State file path")->required();
    ins->add_flag("--json", as_json, "Emit a JSON report");

    CLI11_PARSE(app, argc, argv);

    try {
        if (compress->parsed()) return cmd_compress(cfg);
        if (dec->parsed()) {
            if (indices_spec.empty() == latent_file.empty()) {
                throw std::runtime_error(
                    "decode needs exactly one of --indices or --latent-file");
            }
            return cmd_decode(state_path, indices_spec, latent_file, out_path);
        }
        if (ins->parsed()) return cmd_inspect(inspect_state, as_json);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
