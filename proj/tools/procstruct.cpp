// Command-line front end: corpus generation, training, structure induction,
// evaluation, gradient checks and run manifests.

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <json.hpp>
#include <optional>
#include <sstream>

#include "procstruct/corpus.hpp"
#include "procstruct/error.hpp"
#include "procstruct/gradcheck.hpp"
#include "procstruct/graph_eval.hpp"
#include "procstruct/process_lm.hpp"
#include "procstruct/sequence_encoder.hpp"
#include "procstruct/structure.hpp"

using json = nlohmann::ordered_json;
using namespace procstruct;

namespace {

// Invalid flag values detected after parsing; reported with exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string sha256_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot read '" + path + "' for checksum");
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 16];
  while (in) {
    in.read(buf, sizeof buf);
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  }
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i) hex << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
  return hex.str();
}

// Collects what a command read and wrote; written next to the primary output.
struct Manifest {
  std::vector<std::string> argv;
  json config = json::object();
  std::uint64_t seed = 0;
  std::vector<std::string> inputs;
  std::vector<std::string> outputs;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  void write(const std::string& primary) const {
    json files_in = json::array(), files_out = json::array();
    for (const auto& p : inputs) files_in.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    for (const auto& p : outputs) files_out.push_back({{"path", p}, {"sha256", sha256_file(p)}});
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    json j = {{"command", argv.empty() ? "" : argv[0]},
              {"argv", argv},
              {"config", config},
              {"seed", seed},
              {"inputs", files_in},
              {"outputs", files_out},
              {"duration_seconds", seconds}};
    std::ofstream out(primary + ".manifest.json");
    if (!out) throw Error("cannot write manifest for '" + primary + "'");
    out << j.dump(2) << '\n';
  }
};

std::vector<double> parse_weights(const std::string& text) {
  std::vector<double> w;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    try {
      std::size_t used = 0;
      w.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--weights expects three comma-separated numbers, got '" + text + "'");
    }
  }
  if (w.size() != 3) throw UsageError("--weights expects three comma-separated numbers, got '" + text + "'");
  return w;
}

EvalOptions eval_options(const std::string& weights, double theta, bool filter) {
  EvalOptions o;
  const auto w = parse_weights(weights);
  o.weights = SimWeights{w[0], w[1], w[2]};
  try {
    o.weights.validate();
  } catch (const ContractError& e) {
    throw UsageError(std::string("--weights: ") + e.what());
  }
  if (!(theta >= 0.0 && theta <= 1.0)) throw UsageError("--theta must be in [0, 1]");
  o.theta = theta;
  o.filter_unmatched = filter;
  return o;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path + "'");
  out << text;
}

// ---------------------------------------------------------------------------

struct GenFlags {
  SyntheticParams p;
  std::string out;
};

void add_gen(CLI::App& app, GenFlags& f) {
  app.add_option("--processes", f.p.processes, "Number of processes")->capture_default_str();
  app.add_option("--per-document", f.p.processes_per_document, "Processes per source document")->capture_default_str();
  app.add_option("--vocab", f.p.vocab_size, "Vocabulary size")->capture_default_str();
  app.add_option("--depth-min", f.p.depth_min, "Minimum tree depth")->capture_default_str();
  app.add_option("--depth-max", f.p.depth_max, "Maximum tree depth (at most 6 without --allow-deep)")->capture_default_str();
  app.add_option("--branching-min", f.p.branching_min)->capture_default_str();
  app.add_option("--branching-max", f.p.branching_max)->capture_default_str();
  app.add_option("--sentence-min", f.p.sentence_min, "Minimum words per sentence")->capture_default_str();
  app.add_option("--sentence-max", f.p.sentence_max, "Maximum words per sentence")->capture_default_str();
  app.add_option("--cue", f.p.cue_strength, "Structural cue strength in [0, 1]")->capture_default_str();
  app.add_flag("--allow-deep", f.p.allow_deep, "Permit depths above 6");
  app.add_option("--seed", f.p.seed)->capture_default_str();
  app.add_option("--out", f.out, "Corpus file to write")->required();
}

int run_gen(const GenFlags& f, Manifest& m) {
  try {
    f.p.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  write_corpus(f.out, generate_synthetic(f.p));
  m.seed = f.p.seed;
  m.config = {{"processes", f.p.processes},     {"per_document", f.p.processes_per_document},
              {"vocab", f.p.vocab_size},         {"depth_min", f.p.depth_min},
              {"depth_max", f.p.depth_max},      {"branching_min", f.p.branching_min},
              {"branching_max", f.p.branching_max}, {"sentence_min", f.p.sentence_min},
              {"sentence_max", f.p.sentence_max}, {"cue", f.p.cue_strength},
              {"allow_deep", f.p.allow_deep}};
  m.outputs = {f.out};
  m.write(f.out);
  std::cout << "wrote " << f.p.processes << " processes to " << f.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainFlags {
  LmConfig c;
  std::string corpus, embeddings, resume, out, context = "causal", optimizer = "sgd";
  double valid_fraction = 0.1;
  bool no_preprocess = false;
};

void add_train(CLI::App& app, TrainFlags& f) {
  app.add_option("--corpus", f.corpus, "Corpus file")->required();
  app.add_option("--embeddings", f.embeddings, "Pretrained embeddings, text format");
  app.add_option("--seed", f.c.seed)->capture_default_str();
  app.add_option("--epochs", f.c.epochs)->capture_default_str();
  app.add_option("--hidden", f.c.hidden, "BiLSTM and decoder hidden size")->capture_default_str();
  app.add_option("--d-model", f.c.d_model, "ON-LSTM hidden size")->capture_default_str();
  app.add_option("--chunk", f.c.chunk, "ON-LSTM chunk factor")->capture_default_str();
  app.add_option("--emb-dim", f.c.emb_dim, "Embedding dimension")->capture_default_str();
  app.add_option("--encoder-layers", f.c.encoder_layers)->capture_default_str();
  app.add_option("--onlstm-layers", f.c.onlstm_layers)->capture_default_str();
  app.add_option("--dropout", f.c.dropout)->capture_default_str();
  app.add_option("--lr", f.c.learning_rate)->capture_default_str();
  app.add_option("--clip", f.c.clip_norm)->capture_default_str();
  app.add_option("--batch", f.c.batch_size)->capture_default_str();
  app.add_option("--context", f.context, "causal or bidirectional")->check(CLI::IsMember({"causal", "bidirectional"}))->capture_default_str();
  app.add_option("--optimizer", f.optimizer)->check(CLI::IsMember({"sgd", "adam"}))->capture_default_str();
  app.add_option("--embed-scale", f.c.embed_scale)->capture_default_str();
  app.add_option("--weight-gain", f.c.weight_gain)->capture_default_str();
  app.add_option("--valid-fraction", f.valid_fraction, "Share of the training split held out for validation")->capture_default_str();
  app.add_flag("--no-preprocess", f.no_preprocess, "Skip sentence chunking and depth cutting");
  app.add_option("--resume", f.resume, "Checkpoint to continue from");
  app.add_option("--out", f.out, "Checkpoint to write")->required();
}

struct PreparedCorpus {
  std::vector<ProcessDoc> train, valid, test;
};

PreparedCorpus prepare(const std::string& path, std::uint64_t seed, double valid_fraction, bool raw) {
  auto docs = read_corpus(path);
  if (!raw) docs = preprocess(docs);
  auto split = split_corpus(docs, seed);
  PreparedCorpus p;
  p.test = std::move(split.test);
  if (valid_fraction > 0.0) {
    auto inner = split_corpus(split.train, seed + 1, 1.0 - valid_fraction);
    p.train = std::move(inner.train);
    p.valid = std::move(inner.test);
  } else {
    p.train = std::move(split.train);
  }
  return p;
}

int run_train(TrainFlags f, Manifest& m) {
  f.c.context = f.context == "causal" ? ContextMode::Causal : ContextMode::Bidirectional;
  f.c.optimizer = f.optimizer == "sgd" ? Optimizer::Sgd : Optimizer::Adam;
  try {
    f.c.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  if (!(f.valid_fraction >= 0.0 && f.valid_fraction < 1.0)) throw UsageError("--valid-fraction must be in [0, 1)");
  const PreparedCorpus data = prepare(f.corpus, f.c.seed, f.valid_fraction, f.no_preprocess);

  std::optional<ProcessLm> resume;
  if (!f.resume.empty()) {
    resume = load_checkpoint(f.resume);
    m.inputs.push_back(f.resume);
  }
  std::optional<Tensor> pretrained;
  if (!f.embeddings.empty()) {
    const Vocabulary vocab = resume ? resume->vocab : build_vocabulary(data.train);
    auto load = load_embeddings(f.embeddings, vocab, f.c.emb_dim, f.c.seed);
    std::cout << "embeddings cover " << load.covered << " of " << vocab.size() << " tokens\n";
    pretrained = std::move(load.matrix);
    m.inputs.push_back(f.embeddings);
  }

  const std::string metrics_path = f.out + ".metrics.tsv";
  std::ofstream metrics(metrics_path);
  if (!metrics) throw Error("cannot write '" + metrics_path + "'");
  metrics << "epoch\tstep\ttrain_ppl\tvalid_ppl\tlr\n";
  metrics << std::fixed << std::setprecision(6);
  std::cout << std::fixed << std::setprecision(3);
  std::cout << "train " << data.train.size() << " valid " << data.valid.size() << " test " << data.test.size()
            << " processes\n";
  auto on_epoch = [&](const EpochMetrics& e) {
    metrics << e.epoch << '\t' << e.step << '\t' << e.train_ppl << '\t' << e.valid_ppl << '\t' << e.learning_rate
            << '\n';
    metrics.flush();
    std::cout << "epoch " << e.epoch << " train ppl " << e.train_ppl << " valid ppl " << e.valid_ppl << " lr "
              << e.learning_rate << std::endl;
  };
  TrainResult result = train(data.train, data.valid, f.c, pretrained ? &*pretrained : nullptr, std::move(resume),
                             on_epoch);
  metrics.close();
  save_checkpoint(f.out, result.model);
  const std::string test_path = f.out + ".test.corpus";
  write_corpus(test_path, data.test);
  std::cout << "test perplexity " << perplexity(result.model, data.test) << '\n';

  m.seed = f.c.seed;
  m.config = json::parse(config_json(f.c));
  m.config["valid_fraction"] = f.valid_fraction;
  m.config["preprocess"] = !f.no_preprocess;
  m.inputs.insert(m.inputs.begin(), f.corpus);
  m.outputs = {f.out, metrics_path, test_path};
  m.write(f.out);
  return 0;
}

// ---------------------------------------------------------------------------

struct InduceFlags {
  std::string checkpoint, corpus, out;
  std::size_t gate_layer = 2;
};

void add_induce(CLI::App& app, InduceFlags& f) {
  app.add_option("--checkpoint", f.checkpoint, "Trained model")->required();
  app.add_option("--corpus", f.corpus, "Processes to analyse")->required();
  app.add_option("--gate-layer", f.gate_layer, "ON-LSTM layer whose master forget gate is read (1-based)")->capture_default_str();
  app.add_option("--out", f.out, "Induced structure file")->required();
}

int run_induce(const InduceFlags& f, Manifest& m) {
  const ProcessLm model = load_checkpoint(f.checkpoint);
  if (f.gate_layer < 1 || f.gate_layer > model.onlstm.size()) {
    throw UsageError("--gate-layer " + std::to_string(f.gate_layer) + " out of range 1.." +
                     std::to_string(model.onlstm.size()));
  }
  const auto docs = read_corpus(f.corpus);
  std::vector<InducedRecord> records;
  for (const auto& d : docs) records.push_back(make_record(d.id, induce(model, d, f.gate_layer)));
  std::ostringstream text;
  write_induced(text, records);
  write_text(f.out, text.str());
  m.config = {{"gate_layer", f.gate_layer}};
  m.inputs = {f.checkpoint, f.corpus};
  m.outputs = {f.out};
  m.write(f.out);
  std::cout << "induced " << records.size() << " structures into " << f.out << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct EvalFlags {
  std::string corpus, induced, baseline, out, csv, weights = "0.3,0.3,0.4";
  double theta = 0.5;
  bool filter = false, paper_reference = false;
  std::size_t seeds = 20;
  std::uint64_t seed = 1;
};

void add_eval(CLI::App& app, EvalFlags& f) {
  app.add_option("--corpus", f.corpus, "Gold corpus");
  app.add_option("--induced", f.induced, "Induced structure file");
  app.add_option("--baseline", f.baseline, "Score a baseline instead of an induced file")->check(CLI::IsMember({"random"}));
  app.add_option("--seeds", f.seeds, "Baseline repetitions")->capture_default_str();
  app.add_option("--seed", f.seed)->capture_default_str();
  app.add_option("--weights", f.weights, "Mapping, node and edge weights")->capture_default_str();
  app.add_option("--theta", f.theta, "Label similarity threshold for mapping")->capture_default_str();
  app.add_flag("--filter-unmatched", f.filter, "Drop gold nodes without a match before scoring");
  app.add_flag("--paper-reference", f.paper_reference, "Print the published reference scores");
  app.add_option("--out", f.out, "Report table to write");
  app.add_option("--csv", f.csv, "Per-document CSV to write");
}

int run_eval(const EvalFlags& f, Manifest& m) {
  if (f.paper_reference) {
    std::cout << "Published reference (proprietary corpus, not reproduced here)\n"
              << "Edges\t57%\nNodes\t76%\nsimged\t32%\n";
    if (f.corpus.empty()) return 0;
  }
  if (f.corpus.empty()) throw UsageError("--corpus is required");
  const EvalOptions options = eval_options(f.weights, f.theta, f.filter);
  const auto docs = read_corpus(f.corpus);
  m.inputs = {f.corpus};
  m.config = {{"weights", f.weights}, {"theta", f.theta}, {"filter_unmatched", f.filter}};
  std::ostringstream report;
  report << std::fixed << std::setprecision(6);

  if (!f.baseline.empty()) {
    if (!f.induced.empty()) throw UsageError("--baseline and --induced are exclusive");
    if (f.seeds == 0) throw UsageError("--seeds must be positive");
    const auto r = random_baseline(docs, f.seeds, f.seed, options);
    report << "seed\tsimged\n";
    for (std::size_t s = 0; s < r.per_seed.size(); ++s) report << s << '\t' << r.per_seed[s] << '\n';
    report << "mean\t" << r.mean << '\n';
    m.seed = f.seed;
    m.config["baseline"] = f.baseline;
    m.config["seeds"] = f.seeds;
  } else {
    if (f.induced.empty()) throw UsageError("one of --induced or --baseline is required");
    std::ifstream in(f.induced);
    if (!in) throw Error("cannot open induced file '" + f.induced + "'");
    const auto records = read_induced(in);
    std::map<std::string, const InducedRecord*> by_id;
    for (const auto& r : records) by_id[r.id] = &r;
    std::vector<ProcessGraph> graphs;
    for (const auto& d : docs) {
      auto it = by_id.find(d.id);
      if (it == by_id.end()) throw Error("no induced structure for process '" + d.id + "'");
      graphs.push_back(record_graph(*it->second, d));
    }
    const CorpusReport r = evaluate_graphs(docs, graphs, options);
    write_report_table(report, r);
    if (!f.csv.empty()) {
      std::ostringstream csv;
      write_report_csv(csv, r);
      write_text(f.csv, csv.str());
      m.outputs.push_back(f.csv);
    }
    m.inputs.push_back(f.induced);
  }
  std::cout << report.str();
  if (!f.out.empty()) {
    write_text(f.out, report.str());
    m.outputs.insert(m.outputs.begin(), f.out);
    m.write(f.out);
  }
  return 0;
}

// ---------------------------------------------------------------------------

struct GradFlags {
  std::string op;
  bool inject_bug = false;
  std::uint64_t seed = 1;
  std::size_t seeds = 3;
  double tolerance = 1e-4;
};

void add_gradcheck(CLI::App& app, GradFlags& f) {
  app.add_option("--op", f.op, "Run a single registered check");
  app.add_flag("--inject-bug", f.inject_bug, "Corrupt one analytic gradient entry (negative control)");
  app.add_option("--seed", f.seed)->capture_default_str();
  app.add_option("--seeds", f.seeds, "Random draws per check")->capture_default_str();
  app.add_option("--tolerance", f.tolerance, "Maximum relative error")->capture_default_str();
}

int run_gradcheck(const GradFlags& f) {
  GradCheckOptions o;
  if (f.inject_bug) o.corrupt_factor = 1.5;
  bool any = false, ok = true;
  for (const auto& check : registered_checks()) {
    if (!f.op.empty() && check.name != f.op) continue;
    any = true;
    double worst = 0.0;
    std::string where;
    std::size_t entries = 0;
    for (std::size_t s = 0; s < f.seeds; ++s) {
      const auto r = check.run(f.seed + s, o);
      entries += r.entries;
      if (r.max_rel_error >= worst) {
        worst = r.max_rel_error;
        where = r.worst_entry;
      }
    }
    const bool pass = worst < f.tolerance;
    ok = ok && pass;
    std::printf("%-14s %s  max rel error %.3e over %zu entries (worst %s)\n", check.name.c_str(),
                pass ? "PASS" : "FAIL", worst, entries, where.c_str());
  }
  if (!any) throw UsageError("unknown op '" + f.op + "'");
  return ok ? 0 : 1;
}

// ---------------------------------------------------------------------------

int run_stats(const std::string& corpus, bool raw) {
  auto docs = read_corpus(corpus);
  if (!raw) docs = preprocess(docs);
  std::cout << format_stats(corpus_stats(docs));
  return 0;
}

int dispatch(const std::vector<std::string>& args);

int run_replay(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open manifest '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw FormatError("manifest '" + path + "': " + e.what());
  }
  const auto argv = j.at("argv").get<std::vector<std::string>>();
  std::vector<std::pair<std::string, std::string>> expected;
  for (const auto& o : j.at("outputs")) expected.emplace_back(o.at("path"), o.at("sha256"));
  const int code = dispatch(argv);
  if (code != 0) return code;
  bool same = true;
  for (const auto& [file, sum] : expected) {
    const std::string now = sha256_file(file);
    const bool match = now == sum;
    same = same && match;
    std::cout << (match ? "identical  " : "DIFFERENT  ") << file << '\n';
  }
  return same ? 0 : 1;
}

int dispatch(const std::vector<std::string>& args) {
  CLI::App app{"Process structure induction with an ordered-neurons language model"};
  app.require_subcommand(1);
  GenFlags gen;
  TrainFlags tr;
  InduceFlags ind;
  EvalFlags ev;
  GradFlags gc;
  std::string stats_corpus, manifest;
  bool stats_raw = false;
  add_gen(*app.add_subcommand("gen", "Generate a synthetic corpus with gold hierarchies"), gen);
  add_train(*app.add_subcommand("train", "Train the language model"), tr);
  add_induce(*app.add_subcommand("induce", "Induce process structures from a trained model"), ind);
  add_eval(*app.add_subcommand("eval", "Score induced structures against gold hierarchies"), ev);
  add_gradcheck(*app.add_subcommand("gradcheck", "Finite-difference gradient checks"), gc);
  auto* st = app.add_subcommand("stats", "Corpus statistics");
  st->add_option("--corpus", stats_corpus)->required();
  st->add_flag("--no-preprocess", stats_raw);
  auto* rp = app.add_subcommand("replay", "Re-run a command from its manifest and compare outputs");
  rp->add_option("manifest", manifest)->required();

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  Manifest m;
  m.argv = args;
  try {
    if (command == "gen") return run_gen(gen, m);
    if (command == "train") return run_train(tr, m);
    if (command == "induce") return run_induce(ind, m);
    if (command == "eval") return run_eval(ev, m);
    if (command == "gradcheck") return run_gradcheck(gc);
    if (command == "stats") return run_stats(stats_corpus, stats_raw);
    return run_replay(manifest);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) {
  return dispatch(std::vector<std::string>(argv + 1, argv + argc));
}
