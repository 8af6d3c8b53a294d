#include "strug/cli.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <map>
#include <sstream>

#include "strug/augmentation.hpp"
#include "strug/corpus.hpp"
#include "strug/curation.hpp"
#include "strug/evaluation.hpp"
#include "strug/linearizer.hpp"
#include "strug/model.hpp"
#include "strug/trainer.hpp"
#include "strug/util.hpp"
#include "strug/weak_labeler.hpp"

namespace strug::cli {

using nlohmann::json;

namespace {

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Data problems found by a stage; each record becomes one line of the error report.
struct DataError : std::runtime_error {
    explicit DataError(std::vector<json> recs) : std::runtime_error("data errors"), records(std::move(recs)) {}
    std::vector<json> records;
};

struct PipelineConfig {
    std::uint64_t seed = 0;
    LabelSetting setting = LabelSetting::Human;
    double threshold = 0.5;
    std::map<std::string, std::string> paths;
    MatchPolicy policy;
    AugmentationConfig augmentation;
    ModelConfig model;
    TrainConfig train;
};

PipelineConfig load_config(const std::string& file) {
    PipelineConfig c;
    if (file.empty()) return c;
    if (!std::filesystem::exists(file)) throw UsageError("config file not found: " + file);
    try {
        const json j = json::parse(read_file(file));
        if (!j.is_object()) throw UsageError("config must be a JSON object");
        for (const auto& [key, value] : j.items()) {
            if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "setting") c.setting = parse_setting(value.get<std::string>());
            else if (key == "threshold") c.threshold = value.get<double>();
            else if (key == "paths") c.paths = value.get<std::map<std::string, std::string>>();
            else if (key == "match_policy") c.policy = value.get<MatchPolicy>();
            else if (key == "augmentation") c.augmentation = value.get<AugmentationConfig>();
            else if (key == "model") c.model = value.get<ModelConfig>();
            else if (key == "train") c.train = value.get<TrainConfig>();
            else throw UsageError("unknown config key: " + key);
        }
    } catch (const json::exception& e) {
        throw UsageError("bad config " + file + ": " + e.what());
    } catch (const std::invalid_argument& e) {
        throw UsageError("bad config " + file + ": " + e.what());
    }
    return c;
}

/// Flag values shared by the subcommands; only those actually given override the config.
struct Flags {
    std::string config;
    std::uint64_t seed = 0;
    std::string setting;
    int k_neg = 1;
    double replace_prob = 0.5;
    int epochs = 5;
    double threshold = 0.5;
    std::uint64_t epoch = 0;
    int seeds = 1;
    std::map<std::string, std::string> paths;
};

void add_path(CLI::App* sub, Flags& f, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option(flag, f.paths[key], help);
}

class Runner {
public:
    Runner(std::ostream& out, std::ostream& err) : out_(out), err_(err) {}

    int run(const std::vector<std::string>& args) {
        CLI::App app{"Text-table grounding pipeline: label, augment, train, evaluate, curate", "strug"};
        app.require_subcommand(1, 1);
        auto shared = [&](CLI::App* sub) {
            sub->add_option("--config", flags_.config, "JSON pipeline config (default: $STRUG_CONFIG)");
            sub->add_option("--seed", flags_.seed, "Seed for every stochastic stage");
            sub->add_option("--errors", flags_.paths["errors"], "Write the JSONL error report here");
        };

        auto* validate = app.add_subcommand("validate", "Check a JSONL corpus");
        shared(validate);
        add_path(validate, flags_, "--in", "corpus", "Corpus JSONL");

        auto* label = app.add_subcommand("label", "Derive grounding labels");
        shared(label);
        add_path(label, flags_, "--in", "corpus", "Corpus JSONL");
        add_path(label, flags_, "--out", "labels", "Labels JSONL");
        label->add_option("--setting", flags_.setting, "human|auto");

        auto* augment = app.add_subcommand("augment", "Value replacement and negative tables");
        shared(augment);
        add_path(augment, flags_, "--corpus", "corpus", "Corpus JSONL");
        add_path(augment, flags_, "--labels", "labels", "Labels JSONL");
        add_path(augment, flags_, "--out", "augmented", "Augmented JSONL");
        augment->add_option("--k-neg", flags_.k_neg, "Negative tables per example");
        augment->add_option("--replace-prob", flags_.replace_prob, "Per-phrase replacement probability");
        augment->add_option("--epoch", flags_.epoch, "Epoch index mixed into the per-example seed");

        auto* train = app.add_subcommand("train", "Train the grounding model");
        shared(train);
        add_path(train, flags_, "--corpus", "corpus", "Corpus JSONL");
        add_path(train, flags_, "--labels", "labels", "Labels JSONL (derived with --setting when absent)");
        add_path(train, flags_, "--augmented", "augmented", "Fixed augmented JSONL instead of per-epoch augmentation");
        add_path(train, flags_, "--out", "checkpoint", "Checkpoint JSON");
        add_path(train, flags_, "--log", "log", "TrainLog CSV (default: <out>.log.csv)");
        add_path(train, flags_, "--vocab", "vocab", "Also write the vocabulary here");
        train->add_option("--setting", flags_.setting, "human|auto");
        train->add_option("--k-neg", flags_.k_neg, "Negative tables per example");
        train->add_option("--replace-prob", flags_.replace_prob, "Per-phrase replacement probability");
        train->add_option("--epochs", flags_.epochs, "Training epochs");

        auto* eval = app.add_subcommand("eval", "Score a checkpoint");
        shared(eval);
        add_path(eval, flags_, "--checkpoint", "checkpoint", "Checkpoint JSON");
        add_path(eval, flags_, "--corpus", "corpus", "Corpus JSONL");
        add_path(eval, flags_, "--labels", "labels", "Labels JSONL (derived with --setting when absent)");
        add_path(eval, flags_, "--augmented", "augmented", "Augmented JSONL to score instead of the corpus");
        add_path(eval, flags_, "--metrics", "metrics", "Metrics JSON");
        eval->add_option("--setting", flags_.setting, "human|auto");
        eval->add_option("--k-neg", flags_.k_neg, "Negative tables per example");
        eval->add_option("--replace-prob", flags_.replace_prob, "Per-phrase replacement probability");
        eval->add_option("--threshold", flags_.threshold, "Decision threshold for column and value heads");

        auto* gc = app.add_subcommand("grad-check", "Finite-difference gradient check");
        shared(gc);
        gc->add_option("--seeds", flags_.seeds, "Number of consecutive seeds to check")->check(CLI::PositiveNumber);

        auto* ratio = app.add_subcommand("mention-ratio", "Column mention ratio of a text-to-SQL set");
        shared(ratio);
        add_path(ratio, flags_, "--in", "spider", "Spider-format examples JSON");
        add_path(ratio, flags_, "--tables", "tables", "Spider tables JSON");
        add_path(ratio, flags_, "--out", "ratio", "Ratio JSON");

        auto* curate = app.add_subcommand("curate", "Flag explicit column mentions");
        shared(curate);
        add_path(curate, flags_, "--in", "spider", "Spider-format examples JSON");
        add_path(curate, flags_, "--tables", "tables", "Spider tables JSON");
        add_path(curate, flags_, "--out", "report", "CurationReport JSON");
        add_path(curate, flags_, "--listing", "listing", "Flag listing text (default: stdout)");

        try {
            std::vector<std::string> reversed(args.rbegin(), args.rend());
            app.parse(reversed);
        } catch (const CLI::CallForHelp&) {
            out_ << app.help();
            return kExitOk;
        } catch (const CLI::ParseError& e) {
            err_ << "usage error: " << e.what() << "\n" << app.help();
            return kExitUsage;
        }

        sub_ = app.get_subcommands().front();
        try {
            resolve_config();
            const std::string name = sub_->get_name();
            if (name == "validate") return cmd_validate();
            if (name == "label") return cmd_label();
            if (name == "augment") return cmd_augment();
            if (name == "train") return cmd_train();
            if (name == "eval") return cmd_eval();
            if (name == "grad-check") return cmd_grad_check();
            if (name == "mention-ratio") return cmd_mention_ratio();
            return cmd_curate();
        } catch (const UsageError& e) {
            err_ << "usage error: " << e.what() << "\n" << sub_->help();
            return kExitUsage;
        } catch (const DataError& e) {
            report(e.records);
            return kExitDataError;
        } catch (const MalformedRecord& e) {
            report({json{{"line", e.line_no()}, {"error", e.reason()}}});
            return kExitDataError;
        } catch (const std::exception& e) {
            report({json{{"error", e.what()}}});
            return kExitDataError;
        }
    }

private:
    bool given(const std::string& flag) const {
        const auto* opt = sub_->get_option_no_throw(flag);
        return opt && opt->count() > 0;
    }

    void resolve_config() {
        std::string file = flags_.config;
        if (!given("--config")) {
            if (const char* env = std::getenv(kConfigEnv); env && *env) file = env;
        }
        cfg_ = load_config(file);
        if (given("--seed")) cfg_.seed = flags_.seed;
        if (given("--setting")) {
            try {
                cfg_.setting = parse_setting(flags_.setting);
            } catch (const std::invalid_argument& e) {
                throw UsageError(e.what());
            }
        }
        if (given("--k-neg")) cfg_.augmentation.k_neg = flags_.k_neg;
        if (given("--replace-prob")) cfg_.augmentation.replace_prob = flags_.replace_prob;
        if (given("--epochs")) cfg_.train.epochs = flags_.epochs;
        if (given("--threshold")) cfg_.threshold = flags_.threshold;
        for (const auto& [key, value] : flags_.paths)
            if (!value.empty()) cfg_.paths[key] = value;

        cfg_.augmentation.seed = cfg_.seed;
        cfg_.train.seed = cfg_.seed;
        cfg_.train.k_neg = cfg_.augmentation.k_neg;
        if (cfg_.augmentation.k_neg < 0) throw UsageError("--k-neg must be >= 0");
        if (cfg_.augmentation.replace_prob < 0.0 || cfg_.augmentation.replace_prob > 1.0)
            throw UsageError("--replace-prob must be in [0, 1]");
        try {
            cfg_.train.validate();
        } catch (const std::invalid_argument& e) {
            throw UsageError(e.what());
        }
    }

    std::optional<std::string> path(const std::string& key) const {
        auto it = cfg_.paths.find(key);
        if (it == cfg_.paths.end() || it->second.empty()) return std::nullopt;
        return it->second;
    }

    std::string input(const std::string& key, const std::string& flag) const {
        auto p = path(key);
        if (!p) throw UsageError("missing input " + flag);
        if (!std::filesystem::exists(*p)) throw UsageError("input not found: " + *p);
        return *p;
    }

    std::string output(const std::string& key, const std::string& flag) const {
        auto p = path(key);
        if (!p) throw UsageError("missing output " + flag);
        return *p;
    }

    void report(const std::vector<json>& records) {
        std::string text;
        for (const auto& r : records) text += r.dump() + "\n";
        if (auto p = path("errors")) {
            write_file_atomic(*p, text);
            err_ << records.size() << " error(s) written to " << *p << "\n";
        } else {
            err_ << text;
        }
    }

    static std::vector<json> malformed_records(const std::vector<MalformedRecord>& errors) {
        std::vector<json> out;
        for (const auto& e : errors) out.push_back(json{{"line", e.line_no()}, {"error", e.reason()}});
        return out;
    }

    std::vector<ParallelExample> read_corpus_strict(const std::string& file) {
        auto parsed = parse_corpus_file(file, IngestMode::Lenient);
        if (!parsed.errors.empty()) throw DataError(malformed_records(parsed.errors));
        return std::move(parsed.examples);
    }

    std::map<std::string, Labeling> read_labels(const std::string& file) {
        std::map<std::string, Labeling> out;
        std::istringstream in(read_file(file));
        std::string line;
        std::size_t line_no = 0;
        std::vector<json> errors;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                const json j = json::parse(line);
                Labeling l;
                l.labels = labels_from_json(j);
                for (const auto& s : j.at("spans")) l.spans.push_back(span_from_json(s));
                out[j.at("example_id").get<std::string>()] = std::move(l);
            } catch (const std::exception& e) {
                errors.push_back(json{{"file", file}, {"line", line_no}, {"error", e.what()}});
            }
        }
        if (!errors.empty()) throw DataError(errors);
        return out;
    }

    /// Labels from --labels when given, otherwise derived with the configured setting.
    std::vector<Labeling> labelings_for(const std::vector<ParallelExample>& examples) {
        std::vector<Labeling> out;
        if (auto p = path("labels")) {
            const auto by_id = read_labels(input("labels", "--labels"));
            std::vector<json> missing;
            for (const auto& ex : examples) {
                auto it = by_id.find(ex.example_id);
                if (it == by_id.end()) {
                    missing.push_back(json{{"example_id", ex.example_id}, {"error", "no labels for example"}});
                    continue;
                }
                if (it->second.labels.y_col.size() != ex.table.num_columns())
                    missing.push_back(json{{"example_id", ex.example_id}, {"error", "label shape does not match table"}});
                out.push_back(it->second);
            }
            if (!missing.empty()) throw DataError(missing);
        } else {
            for (const auto& ex : examples) out.push_back(derive_labels(ex, cfg_.setting, cfg_.policy));
        }
        return out;
    }

    std::vector<AugmentedExample> augment_all(const std::vector<ParallelExample>& examples,
                                              const std::vector<Labeling>& labelings, const std::vector<Table>& index,
                                              std::uint64_t epoch) {
        std::vector<AugmentedExample> out;
        out.reserve(examples.size());
        for (std::size_t i = 0; i < examples.size(); ++i)
            out.push_back(augment(examples[i], labelings[i], index, cfg_.augmentation, epoch));
        return out;
    }

    std::vector<AugmentedExample> read_augmented(const std::string& file) {
        std::vector<AugmentedExample> out;
        std::istringstream in(read_file(file));
        std::string line;
        std::size_t line_no = 0;
        std::vector<json> errors;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            try {
                out.push_back(augmented_from_json(json::parse(line)));
            } catch (const std::exception& e) {
                errors.push_back(json{{"file", file}, {"line", line_no}, {"error", e.what()}});
            }
        }
        if (!errors.empty()) throw DataError(errors);
        return out;
    }

    static std::vector<ParallelExample> vocab_sources(const std::vector<AugmentedExample>& data) {
        std::vector<ParallelExample> out;
        for (const auto& a : data) {
            ParallelExample ex = a.base;
            out.push_back(ex);
            for (const auto& t : a.presented_tables) {
                ex.table = t;
                ex.highlighted_cells.clear();
                out.push_back(ex);
            }
        }
        return out;
    }

    // Subcommands -----------------------------------------------------------------------------

    int cmd_validate() {
        const auto file = input("corpus", "--in");
        const auto parsed = parse_corpus_file(file, IngestMode::Lenient);
        out_ << "valid=" << parsed.examples.size() << " malformed=" << parsed.errors.size() << "\n";
        if (!parsed.errors.empty()) throw DataError(malformed_records(parsed.errors));
        return kExitOk;
    }

    int cmd_label() {
        const auto file = input("corpus", "--in");
        const auto dest = output("labels", "--out");
        const auto parsed = parse_corpus_file(file, IngestMode::Lenient);
        std::string text;
        std::size_t cols = 0, toks = 0, spans = 0;
        for (const auto& ex : parsed.examples) {
            const auto l = derive_labels(ex, cfg_.setting, cfg_.policy);
            for (int v : l.labels.y_col) cols += static_cast<std::size_t>(v);
            for (int v : l.labels.y_val) toks += static_cast<std::size_t>(v);
            spans += l.spans.size();
            text += label_record(ex.example_id, l, cfg_.setting).dump() + "\n";
        }
        write_file_atomic(dest, text);
        out_ << "labeled=" << parsed.examples.size() << " setting=" << to_string(cfg_.setting)
             << " grounded_columns=" << cols << " value_tokens=" << toks << " spans=" << spans
             << " malformed=" << parsed.errors.size() << "\n";
        if (!parsed.errors.empty()) throw DataError(malformed_records(parsed.errors));
        return kExitOk;
    }

    int cmd_augment() {
        const auto examples = read_corpus_strict(input("corpus", "--corpus"));
        const auto dest = output("augmented", "--out");
        const auto labelings = labelings_for(examples);
        const auto index = build_table_index(examples);
        const auto data = augment_all(examples, labelings, index, flags_.epoch);
        std::string text;
        std::size_t replaced = 0;
        for (const auto& a : data) {
            replaced += a.provenance.replacements.size();
            text += to_json(a).dump() + "\n";
        }
        write_file_atomic(dest, text);
        out_ << "augmented=" << data.size() << " replacements=" << replaced << " k_neg=" << cfg_.augmentation.k_neg
             << " seed=" << cfg_.seed << "\n";
        return kExitOk;
    }

    int cmd_train() {
        const auto dest = output("checkpoint", "--out");
        const std::string log_path = path("log").value_or(dest + ".log.csv");
        Vocab vocab;
        TrainResult result;
        if (path("augmented")) {
            const auto data = read_augmented(input("augmented", "--augmented"));
            vocab = build_vocab(vocab_sources(data));
            result = train(data, vocab, cfg_.model, cfg_.train);
        } else {
            const auto examples = read_corpus_strict(input("corpus", "--corpus"));
            const auto labelings = labelings_for(examples);
            const auto index = build_table_index(examples);
            vocab = build_vocab(examples);
            EpochDataset dataset = [&](std::uint64_t epoch) { return augment_all(examples, labelings, index, epoch); };
            result = train(dataset, vocab, cfg_.model, cfg_.train);
        }
        write_file_atomic(dest, checkpoint_to_json(result.params, vocab).dump());
        write_file_atomic(log_path, result.log.to_csv());
        if (auto v = path("vocab")) write_file_atomic(*v, vocab.serialize());
        out_ << "steps=" << result.log.steps.size() << " epochs=" << result.log.epoch_loss.size();
        if (!result.log.epoch_loss.empty()) out_ << " final_epoch_loss=" << format_double(result.log.epoch_loss.back());
        out_ << " params=" << result.params.num_parameters() << " hash=" << hex64(params_hash(result.params)) << "\n";
        return kExitOk;
    }

    int cmd_eval() {
        Vocab vocab;
        const Params params = checkpoint_from_json(json::parse(read_file(input("checkpoint", "--checkpoint"))), &vocab);
        std::vector<AugmentedExample> data;
        if (path("augmented")) {
            data = read_augmented(input("augmented", "--augmented"));
        } else {
            const auto examples = read_corpus_strict(input("corpus", "--corpus"));
            data = augment_all(examples, labelings_for(examples), build_table_index(examples), 0);
        }
        std::vector<ModelOutput> outputs;
        std::vector<GroundingLabels> labels;
        for (const auto& a : data) {
            outputs.push_back(
                forward(linearize_example(a, vocab, static_cast<std::size_t>(params.config.max_len)), params));
            labels.push_back(a.labels);
        }
        const auto metrics = score_grounding(outputs, labels, cfg_.threshold);
        const auto baseline = random_baseline(labels, cfg_.seed);
        out_ << format_metrics_table(metrics, &baseline);
        if (auto p = path("metrics")) {
            const json j{{"examples", data.size()}, {"model", to_json(metrics)}, {"random_baseline", to_json(baseline)}};
            write_file_atomic(*p, j.dump(2) + "\n");
        }
        return kExitOk;
    }

    int cmd_grad_check() {
        bool ok = true;
        for (int s = 0; s < flags_.seeds; ++s) {
            const std::uint64_t seed = cfg_.seed + static_cast<std::uint64_t>(s);
            const auto r = grad_check(micro_model_config(), seed);
            const bool pass = r.finite && r.max_relative_error < 1e-4;
            ok = ok && pass;
            out_ << "seed=" << seed << " max_relative_error=" << format_double(r.max_relative_error)
                 << " worst=" << r.worst_tensor << (pass ? " ok" : " FAIL") << "\n";
        }
        return ok ? kExitOk : kExitDataError;
    }

    std::vector<TextToSqlExample> read_spider() {
        const json examples = json::parse(read_file(input("spider", "--in")));
        if (path("tables")) {
            const json tables = json::parse(read_file(input("tables", "--tables")));
            return load_spider(examples, &tables);
        }
        return load_spider(examples);
    }

    int cmd_mention_ratio() {
        const auto dataset = read_spider();
        const auto report = build_curation_report(dataset);
        const auto& r = report.mention_ratio;
        out_ << "column_mention_ratio=" << format_double(r.ratio) << " mentioned=" << r.mentioned
             << " total=" << r.total << "\n";
        if (r.empty_denominator) err_ << "warning: no constraint column references\n";
        std::size_t skipped = 0;
        for (const auto& e : r.per_example)
            if (e.error) {
                ++skipped;
                err_ << "skipped " << e.example_id << ": " << *e.error << "\n";
            }
        if (auto p = path("ratio")) {
            json per = json::array();
            for (const auto& e : r.per_example) {
                json row{{"id", e.example_id}, {"constraint_refs", e.constraint_refs}, {"mentioned_refs", e.mentioned_refs}};
                if (e.error) row["error"] = *e.error;
                per.push_back(std::move(row));
            }
            const json j{{"column_mention_ratio", r.ratio},
                         {"mentioned", r.mentioned},
                         {"total", r.total},
                         {"empty_denominator", r.empty_denominator},
                         {"skipped", skipped},
                         {"per_example", per}};
            write_file_atomic(*p, j.dump(2) + "\n");
        }
        return kExitOk;
    }

    int cmd_curate() {
        const auto dest = output("report", "--out");
        const auto dataset = read_spider();
        const auto report = build_curation_report(dataset);
        json j = to_json(report);
        j["complex_subset"] = select_complex_subset(dataset);
        write_file_atomic(dest, j.dump(2) + "\n");
        const auto listing = format_flag_listing(report);
        if (auto p = path("listing")) write_file_atomic(*p, listing);
        else out_ << listing;
        out_ << "examples=" << dataset.size() << " complex=" << j["complex_subset"].size()
             << " column_mention_ratio=" << format_double(report.mention_ratio.ratio) << "\n";
        return kExitOk;
    }

    std::ostream& out_;
    std::ostream& err_;
    Flags flags_;
    PipelineConfig cfg_;
    CLI::App* sub_ = nullptr;
};

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    return Runner(out, err).run(args);
}

}  // namespace strug::cli
