// recindial command line: synth, preprocess, train, generate, evaluate, serve.

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "recindial/pipeline.hpp"
#include "recindial/service.hpp"
#include "recindial/synthetic.hpp"

using namespace recindial;
using nlohmann::json;

namespace {

struct Options {
    std::string config;
    std::string checkpoint;
    std::string data_dir;
    std::string out;
    std::string split = "test";
    std::string transcript;
    std::string gold;
    std::string report;
    std::string variant = "full";
    std::string corpus, format = "redial", triples, entities, links, items;
    std::string host = "127.0.0.1";
    std::size_t beam_width = 0, topk = 0, nmax = 0, epochs = 0;
    std::size_t dialogues = 600, min_count = 1, max_context = 256, threads = 4;
    double skew = 1.0;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int port = 8080;
};

std::string hex64(std::uint64_t v) {
    std::ostringstream o;
    o << std::hex << std::setw(16) << std::setfill('0') << v;
    return o.str();
}

void apply_env(Options& o) {
    if (const char* c = std::getenv("RECINDIAL_CHECKPOINT"); c && *c) o.checkpoint = c;
    if (const char* p = std::getenv("RECINDIAL_PORT"); p && *p) o.port = std::stoi(p);
}

ExperimentConfig load_config(const Options& o) {
    ExperimentConfig c = o.config.empty() ? ExperimentConfig{} : ExperimentConfig::from_json_file(o.config);
    if (o.seed_set) {
        c.training.seed = o.seed;
        c.model.seed = o.seed;
    }
    if (o.epochs) c.training.epochs = o.epochs;
    if (o.beam_width) c.decode.beam_width = o.beam_width;
    if (o.topk) c.decode.top_k = o.topk;
    if (o.nmax) c.decode.max_steps = o.nmax;
    if (o.variant == "no-vp") c.variant.vocab_pointer = false;
    else if (o.variant == "no-kg") c.variant.knowledge = false;
    return c;
}

void require(const std::string& value, const char* flag) {
    if (value.empty()) throw CLI::RequiredError(flag);
}

int cmd_synth(const Options& o) {
    require(o.out, "--out");
    SyntheticOptions so;
    so.dialogues = o.dialogues;
    so.skew = o.skew;
    if (o.seed_set) so.seed = o.seed;
    const auto world = make_synthetic_world();
    const auto dialogues = generate_synthetic_dialogues(world, so);
    write_synthetic_bundle(o.out, world, dialogues);
    std::cerr << "wrote " << dialogues.size() << " dialogues to " << o.out << "\n";
    return 0;
}

int cmd_preprocess(const Options& o) {
    require(o.corpus, "--corpus");
    require(o.triples, "--triples");
    require(o.links, "--links");
    require(o.data_dir, "--data-dir");
    PreprocessInputs in;
    in.corpus = o.corpus;
    in.format = o.format == "normalized" ? CorpusFormat::normalized : CorpusFormat::redial;
    in.triples = o.triples;
    in.entities = o.entities;
    in.links = o.links;
    in.items = o.items;
    if (o.seed_set) in.split_seed = o.seed;
    in.min_count = o.min_count;
    in.max_context_tokens = o.max_context;
    const auto data = prepare_data(in);
    for (const auto& w : data.warnings) std::cerr << "warning: " << w << "\n";
    save_prepared(o.data_dir, data);
    std::cerr << "vocabulary " << data.vocab.size() << " (" << data.vocab.general_size() << " general, "
              << data.vocab.item_partition_size() << " item), entities " << data.graph.entity_count() << ", pairs "
              << data.pairs.train.size() << "/" << data.pairs.valid.size() << "/" << data.pairs.test.size() << "\n";
    return 0;
}

int cmd_train(const Options& o) {
    require(o.data_dir, "--data-dir");
    require(o.checkpoint, "--checkpoint");
    const auto config = load_config(o);
    const auto data = load_prepared(o.data_dir);
    TrainReport report;
    RecModel model = train_model(data, config, &report, [](const EpochStats& s) {
        std::cerr << "epoch " << s.epoch << "  train ppl " << s.train_ppl << "  valid ppl " << s.valid_ppl
                  << "  kg " << s.valid_kg << "  steps " << s.optimizer_steps << "\n";
    });
    save_checkpoint(o.checkpoint, model);
    const std::string report_path = o.report.empty() ? o.checkpoint + ".report.json" : o.report;
    std::ofstream(report_path) << report.to_json() << "\n";
    std::cerr << "best epoch " << report.best_epoch << " (valid ppl " << report.best_valid_ppl << "), checkpoint "
              << o.checkpoint << "\n";
    return 0;
}

int cmd_generate(const Options& o) {
    require(o.data_dir, "--data-dir");
    require(o.checkpoint, "--checkpoint");
    require(o.out, "--out");
    const auto config = load_config(o);
    const auto data = load_prepared(o.data_dir);
    const RecModel model = load_checkpoint(o.checkpoint);
    const auto instances = generate_transcript(model, data, split_pairs(data, o.split), config.decode);
    save_transcript(o.out, instances);
    std::cerr << "wrote " << instances.size() << " responses to " << o.out << "\n";
    return 0;
}

int cmd_evaluate(const Options& o) {
    require(o.transcript, "--transcript");
    auto instances = load_transcript(o.transcript);
    if (!o.gold.empty()) {
        std::ifstream in(o.gold);
        if (!in) throw std::runtime_error("cannot open gold file: " + o.gold);
        std::unordered_map<std::string, json> gold;
        std::string line;
        while (std::getline(in, line)) {
            if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
            json j = json::parse(line);
            gold.emplace(j.at("pair_id").get<std::string>(), std::move(j));
        }
        for (auto& inst : instances) {
            auto it = gold.find(inst.pair_id);
            if (it == gold.end()) throw DataError("pair " + inst.pair_id + " missing from " + o.gold);
            inst.gold_items = it->second.at("gold_items").get<std::vector<std::string>>();
            inst.reference_tokens.clear();
            for (const auto& t : it->second.at("response")) {
                const auto s = t.get<std::string>();
                if (s == "[RecS]" || s == "[RecE]" || s == "[PAD]") continue;
                if (s == "[EOS]") break;
                inst.reference_tokens.push_back(s);
            }
        }
    }
    std::unordered_map<std::string, std::size_t> counts;
    std::optional<double> ppl;
    if (!o.data_dir.empty()) {
        const auto data = load_prepared(o.data_dir);
        counts = data.train_item_counts;
        if (!o.checkpoint.empty()) ppl = model_perplexity(load_checkpoint(o.checkpoint), data, split_pairs(data, o.split));
    }
    MetricsReport report = compute_metrics(instances, counts);
    report.perplexity = ppl;
    std::cout << report.to_text();
    if (!o.report.empty()) std::ofstream(o.report) << report.to_json() << "\n";
    return 0;
}

ChatServer* g_server = nullptr;

void on_signal(int) {
    if (g_server) g_server->stop();
}

int cmd_serve(const Options& o) {
    require(o.data_dir, "--data-dir");
    require(o.checkpoint, "--checkpoint");
    const auto config = load_config(o);
    auto data = load_prepared(o.data_dir);
    InferenceEngine engine(load_checkpoint(o.checkpoint), std::move(data.vocab), std::move(data.graph),
                           std::move(data.links), std::move(data.catalog));
    ServiceOptions so;
    so.host = o.host;
    so.port = o.port;
    so.http_threads = o.threads;
    so.checkpoint_hash = hex64(file_hash(o.checkpoint));
    so.defaults.top_k = config.decode.top_k;
    so.defaults.beam_width = config.decode.beam_width;
    so.defaults.max_steps = config.decode.max_steps;
    so.defaults.length_penalty = config.decode.length_penalty;
    ChatServer server(engine, so);
    g_server = &server;
    std::signal(SIGINT, on_signal);
    std::signal(SIGTERM, on_signal);
    std::cerr << "serving on http://" << o.host << ":" << o.port << "\n";
    if (!server.listen()) {
        std::cerr << "error: cannot listen on " << o.host << ":" << o.port << "\n";
        return 1;
    }
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"RecInDial: knowledge-aware recommendation dialogue with a vocabulary pointer"};
    app.require_subcommand(1);
    Options o;

    auto seed_opt = [&](CLI::App* c) {
        c->add_option_function<std::uint64_t>(
            "--seed", [&](std::uint64_t v) { o.seed = v; o.seed_set = true; }, "Random seed");
    };
    auto decode_opts = [&](CLI::App* c) {
        c->add_option("--beam-width", o.beam_width, "Beam width");
        c->add_option("--topk", o.topk, "Number of ranked items to report");
        c->add_option("--nmax", o.nmax, "Maximum generated tokens");
    };

    auto* synth = app.add_subcommand("synth", "Write the synthetic movie corpus, catalog, link map and graph");
    synth->add_option("--out", o.out, "Output directory")->required();
    synth->add_option("--dialogues", o.dialogues, "Number of dialogues")->check(CLI::PositiveNumber);
    synth->add_option("--skew", o.skew, "Zipf exponent of item popularity");
    seed_opt(synth);

    auto* pre = app.add_subcommand("preprocess", "Build vocabulary, pairs and splits from a corpus");
    pre->add_option("--corpus", o.corpus, "Corpus file")->required()->check(CLI::ExistingFile);
    pre->add_option("--format", o.format, "Corpus format")->check(CLI::IsMember({"redial", "normalized"}));
    pre->add_option("--triples", o.triples, "Knowledge graph triples (tsv)")->required()->check(CLI::ExistingFile);
    pre->add_option("--entities", o.entities, "Entity list fixing ids")->check(CLI::ExistingFile);
    pre->add_option("--links", o.links, "Entity link map (json)")->required()->check(CLI::ExistingFile);
    pre->add_option("--items", o.items, "Item catalog (tsv)")->check(CLI::ExistingFile);
    pre->add_option("--data-dir", o.data_dir, "Output directory")->required();
    pre->add_option("--min-count", o.min_count, "Minimum word count for the vocabulary")->check(CLI::PositiveNumber);
    pre->add_option("--max-context", o.max_context, "Context budget in tokens")->check(CLI::PositiveNumber);
    seed_opt(pre);

    auto* tr = app.add_subcommand("train", "Train a model and write a checkpoint");
    tr->add_option("--data-dir", o.data_dir, "Preprocessed data directory")->required();
    tr->add_option("--checkpoint", o.checkpoint, "Output checkpoint");
    tr->add_option("--config", o.config, "Experiment config (json)")->check(CLI::ExistingFile);
    tr->add_option("--epochs", o.epochs, "Override the number of epochs")->check(CLI::PositiveNumber);
    tr->add_option("--variant", o.variant, "Model variant")->check(CLI::IsMember({"full", "no-vp", "no-kg"}));
    tr->add_option("--report", o.report, "Training report path (json)");
    seed_opt(tr);

    auto* gen = app.add_subcommand("generate", "Decode a split into a transcript");
    gen->add_option("--data-dir", o.data_dir, "Preprocessed data directory")->required();
    gen->add_option("--checkpoint", o.checkpoint, "Checkpoint");
    gen->add_option("--config", o.config, "Experiment config (json)")->check(CLI::ExistingFile);
    gen->add_option("--split", o.split, "Split to decode")->check(CLI::IsMember({"train", "valid", "test"}));
    gen->add_option("--out", o.out, "Transcript path (jsonl)")->required();
    decode_opts(gen);
    seed_opt(gen);

    auto* ev = app.add_subcommand("evaluate", "Score a transcript");
    ev->add_option("--transcript", o.transcript, "Transcript (jsonl)")->required()->check(CLI::ExistingFile);
    ev->add_option("--gold", o.gold, "Gold pair file (jsonl)")->check(CLI::ExistingFile);
    ev->add_option("--data-dir", o.data_dir, "Preprocessed data directory (item counts, perplexity)");
    ev->add_option("--checkpoint", o.checkpoint, "Checkpoint for perplexity");
    ev->add_option("--split", o.split, "Split for perplexity")->check(CLI::IsMember({"train", "valid", "test"}));
    ev->add_option("--report", o.report, "Write the report as json");

    auto* srv = app.add_subcommand("serve", "Run the HTTP chat service");
    srv->add_option("--data-dir", o.data_dir, "Preprocessed data directory")->required();
    srv->add_option("--checkpoint", o.checkpoint, "Checkpoint");
    srv->add_option("--config", o.config, "Experiment config (json)")->check(CLI::ExistingFile);
    srv->add_option("--host", o.host, "Bind address");
    srv->add_option("--port", o.port, "Port")->check(CLI::Range(1, 65535));
    srv->add_option("--threads", o.threads, "HTTP worker threads")->check(CLI::PositiveNumber);
    decode_opts(srv);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    apply_env(o);

    try {
        if (*synth) return cmd_synth(o);
        if (*pre) return cmd_preprocess(o);
        if (*tr) return cmd_train(o);
        if (*gen) return cmd_generate(o);
        if (*ev) return cmd_evaluate(o);
        if (*srv) return cmd_serve(o);
    } catch (const CLI::ParseError& e) {
        std::cerr << "error: missing " << e.what() << "\n" << app.help();
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
