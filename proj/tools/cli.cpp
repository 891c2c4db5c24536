#include "cli.hpp"

#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "treematch/embedder.hpp"
#include "treematch/errors.hpp"
#include "treematch/evaluator.hpp"
#include "treematch/model_io.hpp"
#include "treematch/synthdata.hpp"
#include "treematch/trainer.hpp"

namespace treematch::cli {

namespace fs = std::filesystem;

namespace {

// Options shared by the model-facing subcommands.
struct CommonOpts {
    std::uint64_t seed = 1;
    std::size_t workers = 1;
};

struct EmbedderOpts {
    std::string kind = "hash";  // hash | file
    std::size_t dim = 48;
    std::uint64_t embed_seed = 7;
    std::string table_path;
};

std::unique_ptr<TextEmbedder> make_embedder(const EmbedderOpts& opts) {
    if (opts.kind == "hash") {
        return std::make_unique<HashEmbedder>(opts.dim, opts.embed_seed);
    }
    if (opts.kind == "file") {
        if (opts.table_path.empty()) {
            throw std::invalid_argument("--embedder file requires --table");
        }
        return std::make_unique<TableEmbedder>(load_embedding_table(opts.table_path));
    }
    throw std::invalid_argument("unknown embedder kind: " + opts.kind);
}

void add_embedder_options(CLI::App* cmd, EmbedderOpts& opts) {
    cmd->add_option("--embedder", opts.kind, "Text embedder: hash or file")
        ->check(CLI::IsMember({"hash", "file"}))
        ->capture_default_str();
    cmd->add_option("--embed-dim", opts.dim, "Embedding dimension (hash embedder)")
        ->capture_default_str();
    cmd->add_option("--embed-seed", opts.embed_seed, "Hash embedder seed")->capture_default_str();
    cmd->add_option("--table", opts.table_path, "Precomputed embedding table (TSV)")
        ->check(CLI::ExistingFile);
}

struct LoadedBundle {
    Corpus corpus;
    Ontology ontology;
    std::unique_ptr<TextEmbedder> embedder;
    std::unique_ptr<CodeBook> codebook;
};

LoadedBundle load_bundle(const std::string& corpus_dir, const EmbedderOpts& opts) {
    LoadedBundle b;
    b.corpus = load_corpus(corpus_dir);
    b.ontology = load_ontology((fs::path(corpus_dir) / "ontology.txt").string());
    b.embedder = make_embedder(opts);
    b.codebook = std::make_unique<CodeBook>(b.ontology, *b.embedder);
    return b;
}

EmbedderOpts embedder_opts_from_meta(const std::map<std::string, std::string>& meta,
                                     const std::string& table_override) {
    EmbedderOpts opts;
    opts.kind = meta.count("embedder") ? meta.at("embedder") : "hash";
    opts.dim = meta.count("embed_dim") ? std::stoull(meta.at("embed_dim")) : 48;
    opts.embed_seed = meta.count("embed_seed") ? std::stoull(meta.at("embed_seed")) : 7;
    opts.table_path = meta.count("embed_table") ? meta.at("embed_table") : "";
    if (!table_override.empty()) opts.table_path = table_override;
    return opts;
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

struct GenDataArgs {
    CommonOpts common;
    GenConfig config;
    std::string out_dir;
    std::string branching = "6,6,4,3";
};

void run_gen_data(GenDataArgs& args, std::ostream& out) {
    {
        std::array<std::size_t, 4> parsed{};
        std::stringstream ss(args.branching);
        std::string part;
        std::size_t i = 0;
        while (std::getline(ss, part, ',') && i < 4) parsed[i++] = std::stoull(part);
        if (i != 4) throw std::invalid_argument("--branching needs four comma-separated counts");
        args.config.branching = parsed;
    }
    args.config.seed = args.common.seed;
    auto dataset = generate(args.config);
    save_dataset(args.out_dir, dataset);
    out << "wrote corpus to " << args.out_dir << ": " << dataset.corpus.patients.size()
        << " patients, " << dataset.corpus.trials.size() << " trials, "
        << dataset.corpus.criteria.size() << " criteria, " << dataset.ontology.size()
        << " codes\n";
}

// ---------------------------------------------------------------------------
// embed
// ---------------------------------------------------------------------------

struct EmbedArgs {
    EmbedderOpts embedder;
    std::string input_path;
    std::string out_path;
};

void run_embed(EmbedArgs& args, std::ostream& out) {
    auto embedder = make_embedder(args.embedder);
    std::ifstream in(args.input_path);
    if (!in) throw FormatError("cannot open '" + args.input_path + "'");
    EmbeddingTable table;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        table[line] = embedder->embed(line);
    }
    if (table.empty()) throw FormatError("'" + args.input_path + "' has no texts");
    save_embedding_table(args.out_path, table);
    out << "wrote " << table.size() << " embeddings (dim " << embedder->dimension() << ") to "
        << args.out_path << "\n";
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainArgs {
    CommonOpts common;
    EmbedderOpts embedder;
    std::string corpus_dir;
    std::string out_dir;
    std::string precision = "f64";
    std::size_t n_m = 32;
    std::size_t heads = 4;
    std::size_t head_hidden = 32;
    double alpha = 0.5;
    double lambda = 1.0;
    TrainConfig train;
    bool quiet = false;
};

template <typename S>
void run_train_typed(TrainArgs& args, std::ostream& out) {
    auto bundle = load_bundle(args.corpus_dir, args.embedder);

    ModelConfig config;
    config.n_m = args.n_m;
    config.n_e = bundle.embedder->dimension();
    config.n_s = bundle.corpus.max_sentence_tokens;
    config.n_v = bundle.corpus.max_visits;
    config.n_c = bundle.ontology.size();
    config.n_w = bundle.corpus.vocab.size();
    config.attention_heads = args.heads;
    config.head_hidden = args.head_hidden;
    config.beam_infer = args.train.beam_end;
    config.learning_rate = args.train.learning_rate;
    config.alpha = args.alpha;
    config.lambda = args.lambda;
    config.validate();

    const std::uint64_t pair_seed = derive_seed(args.common.seed, "pairs");
    const std::uint64_t split_seed = derive_seed(args.common.seed, "split");
    const std::uint64_t init_seed = derive_seed(args.common.seed, "init");

    auto pair_set = make_label_pairs(bundle.corpus, pair_seed);
    auto split = split_dataset(bundle.corpus, pair_set.pairs, split_seed);
    out << "pairs: " << pair_set.pairs.size() << " (train " << split.train.size() << ", val "
        << split.val.size() << ", test " << split.test.size() << ")";
    if (pair_set.warnings) out << ", warnings " << pair_set.warnings;
    out << "\n";

    auto state = ModelState<S>::init(config, init_seed);
    out << "model parameters: " << state.parameter_count() << " (tree "
        << count_parameters(state.tree) << ")\n";

    TrainConfig train_config = args.train;
    train_config.seed = derive_seed(args.common.seed, "train");
    train_config.workers = args.common.workers;
    auto result = train(state, *bundle.codebook, bundle.corpus, split, train_config,
                        args.quiet ? nullptr : &out);

    fs::create_directories(args.out_dir);
    const std::string ckpt_path = (fs::path(args.out_dir) / "model.ckpt").string();
    std::map<std::string, std::string> meta{
        {"embedder", args.embedder.kind},
        {"embed_dim", std::to_string(bundle.embedder->dimension())},
        {"embed_seed", std::to_string(args.embedder.embed_seed)},
        {"pair_seed", std::to_string(pair_seed)},
        {"split_seed", std::to_string(split_seed)},
        {"best_epoch", std::to_string(result.best_epoch)},
        {"best_val_accuracy", detail::fmt_double(result.best_val_accuracy)},
    };
    if (!args.embedder.table_path.empty()) meta["embed_table"] = args.embedder.table_path;
    save_model(ckpt_path, state, meta);
    write_history_csv((fs::path(args.out_dir) / "history.csv").string(), result.history);
    out << "best val accuracy " << result.best_val_accuracy << " at epoch " << result.best_epoch
        << "; checkpoint " << ckpt_path << "\n";
}

void run_train(TrainArgs& args, std::ostream& out) {
    if (args.precision == "f32") {
        run_train_typed<float>(args, out);
    } else {
        run_train_typed<double>(args, out);
    }
}

// ---------------------------------------------------------------------------
// eval / match / explain share checkpoint loading
// ---------------------------------------------------------------------------

struct EvalArgs {
    CommonOpts common;
    std::string corpus_dir;
    std::string checkpoint;
    std::string out_dir;
    std::string split = "test";
    std::string table_override;
    std::size_t beam = 0;  // 0: use checkpoint config
    std::size_t resamples = 1000;
};

template <typename S>
void run_eval_typed(EvalArgs& args, std::ostream& out) {
    auto loaded = load_model<S>(args.checkpoint);
    auto embedder_opts = embedder_opts_from_meta(loaded.meta, args.table_override);
    auto bundle = load_bundle(args.corpus_dir, embedder_opts);

    const std::uint64_t pair_seed = std::stoull(loaded.meta.at("pair_seed"));
    const std::uint64_t split_seed = std::stoull(loaded.meta.at("split_seed"));
    auto pair_set = make_label_pairs(bundle.corpus, pair_seed);
    auto split = split_dataset(bundle.corpus, pair_set.pairs, split_seed);

    const std::vector<LabeledPair>* pairs = &split.test;
    std::vector<LabeledPair> all;
    if (args.split == "val") {
        pairs = &split.val;
    } else if (args.split == "train") {
        pairs = &split.train;
    } else if (args.split == "all") {
        all = pair_set.pairs;
        pairs = &all;
    }
    if (pairs->empty()) throw DegenerateInputError("selected split has no pairs");

    const std::size_t beam =
        args.beam ? args.beam : loaded.state.config.beam_infer;
    auto scored = score_pairs(loaded.state, *bundle.codebook, bundle.corpus, *pairs, beam,
                              args.common.workers);
    auto report = evaluate_predictions(bundle.corpus, scored, args.resamples, 0.95,
                                       derive_seed(args.common.seed, "bootstrap"));

    fs::create_directories(args.out_dir);
    {
        std::ofstream jf(fs::path(args.out_dir) / "report.json");
        jf << report_json(report) << '\n';
    }
    {
        std::ofstream tf(fs::path(args.out_dir) / "report.txt");
        tf << report_text(report);
    }
    out << report_text(report);
}

void run_eval(EvalArgs& args, std::ostream& out) {
    Checkpoint probe = load_checkpoint(args.checkpoint);
    if (probe.meta.count("dtype") && probe.meta.at("dtype") == "f32") {
        run_eval_typed<float>(args, out);
    } else {
        run_eval_typed<double>(args, out);
    }
}

struct MatchArgs {
    CommonOpts common;
    std::string corpus_dir;
    std::string checkpoint;
    std::string patient_id;
    std::string criterion_id;
    std::string table_override;
    std::string format = "json";  // explain only
    std::string out_path;
    std::size_t beam = 0;
    bool with_explanation = false;
};

template <typename S>
PredictionRecord run_match_typed(MatchArgs& args) {
    auto loaded = load_model<S>(args.checkpoint);
    auto embedder_opts = embedder_opts_from_meta(loaded.meta, args.table_override);
    auto bundle = load_bundle(args.corpus_dir, embedder_opts);

    const auto& patient = bundle.corpus.patients[bundle.corpus.patient_index(args.patient_id)];
    const auto& sentence =
        bundle.corpus.criteria[bundle.corpus.criterion_index(args.criterion_id)];
    const std::size_t beam = args.beam ? args.beam : loaded.state.config.beam_infer;
    return match_pair(loaded.state, *bundle.codebook, bundle.corpus.vocab, patient, sentence,
                      beam, /*with_explanation=*/true);
}

PredictionRecord run_match_dispatch(MatchArgs& args) {
    Checkpoint probe = load_checkpoint(args.checkpoint);
    if (probe.meta.count("dtype") && probe.meta.at("dtype") == "f32") {
        return run_match_typed<float>(args);
    }
    return run_match_typed<double>(args);
}

void emit(const std::string& text, const std::string& out_path, std::ostream& out) {
    if (out_path.empty()) {
        out << text;
        if (text.empty() || text.back() != '\n') out << '\n';
    } else {
        std::ofstream f(out_path, std::ios::trunc);
        if (!f) throw FormatError("cannot open '" + out_path + "' for writing");
        f << text;
        if (text.empty() || text.back() != '\n') f << '\n';
    }
}

void run_match(MatchArgs& args, std::ostream& out) {
    auto record = run_match_dispatch(args);
    record.has_explanation = args.with_explanation;
    emit(prediction_json(record), args.out_path, out);
}

void run_explain(MatchArgs& args, std::ostream& out) {
    auto record = run_match_dispatch(args);
    std::string text;
    if (args.format == "dot") {
        text = explanation_dot(record.explanation);
    } else if (args.format == "text") {
        text = explanation_text(record.explanation);
    } else {
        text = explanation_json(record.explanation);
    }
    emit(text, args.out_path, out);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"patient-trial matching over per-patient memory trees"};
    app.require_subcommand(1);
    app.set_config("--config", "", "Flat key=value config file; flags override it");

    GenDataArgs gen_args;
    auto* gen = app.add_subcommand("gen-data", "Generate a synthetic corpus with ground truth");
    gen->add_option("--out", gen_args.out_dir, "Output corpus directory")->required();
    gen->add_option("--seed", gen_args.common.seed, "Generation seed")->capture_default_str();
    gen->add_option("--patients", gen_args.config.n_patients, "Patient count")
        ->capture_default_str();
    gen->add_option("--trials", gen_args.config.n_trials, "Trial count")->capture_default_str();
    gen->add_option("--branching", gen_args.branching, "Ontology branching, e.g. 6,6,4,3")
        ->capture_default_str();
    gen->add_option("--visits-min", gen_args.config.visits_min)->capture_default_str();
    gen->add_option("--visits-max", gen_args.config.visits_max)->capture_default_str();
    gen->add_option("--noise-prob", gen_args.config.noise_code_prob,
                    "Fill probability for open visit slots")
        ->capture_default_str();
    gen->add_option("--ic-min", gen_args.config.ic_min)->capture_default_str();
    gen->add_option("--ic-max", gen_args.config.ic_max)->capture_default_str();
    gen->add_option("--ec-min", gen_args.config.ec_min)->capture_default_str();
    gen->add_option("--ec-max", gen_args.config.ec_max)->capture_default_str();
    gen->add_option("--max-tokens", gen_args.config.max_sentence_tokens, "Sentence length cap")
        ->capture_default_str();
    gen->add_option("--max-visits", gen_args.config.max_visits, "Visit count cap")
        ->capture_default_str();

    EmbedArgs embed_args;
    auto* embed = app.add_subcommand("embed", "Embed a file of texts into a TSV table");
    embed->add_option("--input", embed_args.input_path, "Texts, one per line")
        ->required()
        ->check(CLI::ExistingFile);
    embed->add_option("--out", embed_args.out_path, "Output TSV path")->required();
    add_embedder_options(embed, embed_args.embedder);

    TrainArgs train_args;
    auto* train_cmd = app.add_subcommand("train", "Train a matcher on a corpus");
    train_cmd->add_option("--corpus", train_args.corpus_dir, "Corpus directory")
        ->required()
        ->check(CLI::ExistingDirectory);
    train_cmd->add_option("--out", train_args.out_dir, "Output directory")->required();
    train_cmd->add_option("--seed", train_args.common.seed, "Master seed")->capture_default_str();
    train_cmd->add_option("--workers", train_args.common.workers, "Parallel pair workers")
        ->capture_default_str();
    add_embedder_options(train_cmd, train_args.embedder);
    train_cmd->add_option("--precision", train_args.precision, "f64 or f32")
        ->check(CLI::IsMember({"f64", "f32"}))
        ->capture_default_str();
    train_cmd->add_option("--n-m", train_args.n_m, "Memory dimension")->capture_default_str();
    train_cmd->add_option("--heads", train_args.heads, "Attention heads")->capture_default_str();
    train_cmd->add_option("--head-hidden", train_args.head_hidden, "Head hidden width")
        ->capture_default_str();
    train_cmd->add_option("--alpha", train_args.alpha, "Exclusion margin")->capture_default_str();
    train_cmd->add_option("--lambda", train_args.lambda, "Distance loss weight")
        ->capture_default_str();
    train_cmd->add_option("--epochs", train_args.train.epochs)->capture_default_str();
    train_cmd->add_option("--batch-size", train_args.train.batch_size)->capture_default_str();
    train_cmd->add_option("--lr", train_args.train.learning_rate)->capture_default_str();
    train_cmd->add_option("--beam-start", train_args.train.beam_start)->capture_default_str();
    train_cmd->add_option("--beam-end", train_args.train.beam_end)->capture_default_str();
    train_cmd->add_flag("--quiet", train_args.quiet, "Suppress per-epoch progress");

    EvalArgs eval_args;
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint");
    eval_cmd->add_option("--corpus", eval_args.corpus_dir)
        ->required()
        ->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--checkpoint", eval_args.checkpoint)
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--out", eval_args.out_dir, "Report directory")->required();
    eval_cmd->add_option("--seed", eval_args.common.seed, "Bootstrap seed")
        ->capture_default_str();
    eval_cmd->add_option("--workers", eval_args.common.workers)->capture_default_str();
    eval_cmd->add_option("--split", eval_args.split, "test, val, train or all")
        ->check(CLI::IsMember({"test", "val", "train", "all"}))
        ->capture_default_str();
    eval_cmd->add_option("--beam", eval_args.beam, "Beam width (0: checkpoint default)")
        ->capture_default_str();
    eval_cmd->add_option("--resamples", eval_args.resamples, "Bootstrap resamples")
        ->capture_default_str();
    eval_cmd->add_option("--table", eval_args.table_override, "Embedding table override")
        ->check(CLI::ExistingFile);

    MatchArgs match_args;
    auto* match_cmd = app.add_subcommand("match", "Predict one (patient, criterion) pair");
    match_cmd->add_option("--corpus", match_args.corpus_dir)
        ->required()
        ->check(CLI::ExistingDirectory);
    match_cmd->add_option("--checkpoint", match_args.checkpoint)
        ->required()
        ->check(CLI::ExistingFile);
    match_cmd->add_option("--patient", match_args.patient_id)->required();
    match_cmd->add_option("--criterion", match_args.criterion_id)->required();
    match_cmd->add_option("--beam", match_args.beam)->capture_default_str();
    match_cmd->add_option("--out", match_args.out_path, "Write to file instead of stdout");
    match_cmd->add_option("--table", match_args.table_override)->check(CLI::ExistingFile);
    match_cmd->add_flag("--explain", match_args.with_explanation,
                        "Include the explanation in the record");

    MatchArgs explain_args;
    auto* explain_cmd =
        app.add_subcommand("explain", "Emit the explanation tree for one pair");
    explain_cmd->add_option("--corpus", explain_args.corpus_dir)
        ->required()
        ->check(CLI::ExistingDirectory);
    explain_cmd->add_option("--checkpoint", explain_args.checkpoint)
        ->required()
        ->check(CLI::ExistingFile);
    explain_cmd->add_option("--patient", explain_args.patient_id)->required();
    explain_cmd->add_option("--criterion", explain_args.criterion_id)->required();
    explain_cmd->add_option("--beam", explain_args.beam)->capture_default_str();
    explain_cmd->add_option("--format", explain_args.format, "json, dot or text")
        ->check(CLI::IsMember({"json", "dot", "text"}))
        ->capture_default_str();
    explain_cmd->add_option("--out", explain_args.out_path, "Write to file instead of stdout");
    explain_cmd->add_option("--table", explain_args.table_override)->check(CLI::ExistingFile);

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) run_gen_data(gen_args, out);
        if (embed->parsed()) run_embed(embed_args, out);
        if (train_cmd->parsed()) run_train(train_args, out);
        if (eval_cmd->parsed()) run_eval(eval_args, out);
        if (match_cmd->parsed()) run_match(match_args, out);
        if (explain_cmd->parsed()) run_explain(explain_args, out);
    } catch (const std::exception& e) {
        nlohmann::json j{{"error", "runtime"}, {"message", e.what()}};
        err << j.dump() << '\n';
        return 1;
    }
    return 0;
}

}  // namespace treematch::cli
