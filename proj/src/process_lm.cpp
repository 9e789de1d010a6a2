#include "procstruct/process_lm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include <json.hpp>

#include "procstruct/error.hpp"
#include "procstruct/parallel.hpp"

namespace procstruct {

using nlohmann::json;

void LmConfig::validate() const {
  auto positive = [](std::size_t v, const char* name) {
    if (v == 0) throw ContractError(std::string("config: ") + name + " must be positive");
  };
  positive(encoder_layers, "encoder_layers");
  positive(onlstm_layers, "onlstm_layers");
  positive(d_model, "d_model");
  positive(hidden, "hidden");
  positive(emb_dim, "emb_dim");
  positive(chunk, "chunk");
  positive(batch_size, "batch_size");
  if (d_model % chunk != 0) {
    throw ContractError("config: chunk " + std::to_string(chunk) + " does not divide d_model " + std::to_string(d_model));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ContractError("config: dropout must be in [0, 1)");
  if (!(learning_rate > 0.0)) throw ContractError("config: learning rate must be positive");
  if (!(clip_norm > 0.0)) throw ContractError("config: clip norm must be positive");
  if (!(embed_scale > 0.0)) throw ContractError("config: embedding scale must be positive");
  if (!(weight_gain > 0.0)) throw ContractError("config: weight gain must be positive");
}

namespace {

void fill_uniform(Tensor& t, double k, Rng& rng) {
  for (auto& v : t.values) v = rng.uniform(-k, k);
}

json config_to_json(const LmConfig& c) {
  return json{{"encoder_layers", c.encoder_layers},
              {"onlstm_layers", c.onlstm_layers},
              {"d_model", c.d_model},
              {"hidden", c.hidden},
              {"emb_dim", c.emb_dim},
              {"chunk", c.chunk},
              {"dropout", c.dropout},
              {"learning_rate", c.learning_rate},
              {"clip_norm", c.clip_norm},
              {"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"seed", c.seed},
              {"master_input", c.master_input == MasterInputMode::Independent ? "independent" : "shared-forget"},
              {"context", c.context == ContextMode::Causal ? "causal" : "bidirectional"},
              {"optimizer", c.optimizer == Optimizer::Sgd ? "sgd" : "adam"},
              {"embed_scale", c.embed_scale},
              {"weight_gain", c.weight_gain}};
}

LmConfig config_from_json(const json& j) {
  LmConfig c;
  c.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  c.onlstm_layers = j.at("onlstm_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.hidden = j.at("hidden").get<std::size_t>();
  c.emb_dim = j.at("emb_dim").get<std::size_t>();
  c.chunk = j.at("chunk").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.learning_rate = j.at("learning_rate").get<double>();
  c.clip_norm = j.at("clip_norm").get<double>();
  c.epochs = j.at("epochs").get<std::size_t>();
  c.batch_size = j.at("batch_size").get<std::size_t>();
  c.seed = j.at("seed").get<std::uint64_t>();
  const auto mode = j.at("master_input").get<std::string>();
  if (mode == "independent") {
    c.master_input = MasterInputMode::Independent;
  } else if (mode == "shared-forget") {
    c.master_input = MasterInputMode::SharedForget;
  } else {
    throw FormatError("unknown master_input mode '" + mode + "'");
  }
  const auto context = j.at("context").get<std::string>();
  if (context == "causal") {
    c.context = ContextMode::Causal;
  } else if (context == "bidirectional") {
    c.context = ContextMode::Bidirectional;
  } else {
    throw FormatError("unknown context mode '" + context + "'");
  }
  const auto optimizer = j.at("optimizer").get<std::string>();
  if (optimizer == "sgd") {
    c.optimizer = Optimizer::Sgd;
  } else if (optimizer == "adam") {
    c.optimizer = Optimizer::Adam;
  } else {
    throw FormatError("unknown optimizer '" + optimizer + "'");
  }
  c.embed_scale = j.at("embed_scale").get<double>();
  c.weight_gain = j.at("weight_gain").get<double>();
  return c;
}

}  // namespace

ProcessLm ProcessLm::create(const LmConfig& config, Vocabulary vocab, const Tensor* pretrained) {
  config.validate();
  ProcessLm m;
  m.config = config;
  m.vocab = std::move(vocab);
  m.learning_rate = config.learning_rate;
  Rng rng(mix_seed(config.seed, 0x11));

  const std::size_t V = m.vocab.size();
  if (pretrained) {
    if (pretrained->shape != Shape{V, config.emb_dim}) {
      throw DimensionError("pretrained embeddings " + shape_string(pretrained->shape) + " do not match [" +
                           std::to_string(V) + "x" + std::to_string(config.emb_dim) + "]");
    }
    m.embedding = *pretrained;
  } else {
    m.embedding = hashed_embeddings(m.vocab, config.emb_dim, config.seed);
    for (auto& v : m.embedding.values) v *= config.embed_scale;
  }
  m.sentence_encoder = StackedBiLstm::random(config.emb_dim, config.hidden, config.encoder_layers, rng);
  m.process_encoder = StackedBiLstm::random(2 * config.hidden, config.hidden, config.encoder_layers, rng);
  for (std::size_t k = 0; k < config.onlstm_layers; ++k) {
    const std::size_t in = k == 0 ? 2 * config.hidden : config.d_model;
    m.onlstm.push_back(OnLstmCellParams::random(in, config.d_model, config.chunk, rng));
  }
  const double kd = 1.0 / std::sqrt(static_cast<double>(config.d_model));
  m.start_context = Tensor(Shape{config.d_model});
  fill_uniform(m.start_context, 0.1, rng);
  m.init_h_w = Tensor(Shape{config.hidden, config.d_model});
  m.init_h_b = Tensor(Shape{config.hidden});
  m.init_c_w = Tensor(Shape{config.hidden, config.d_model});
  m.init_c_b = Tensor(Shape{config.hidden});
  fill_uniform(m.init_h_w, kd, rng);
  fill_uniform(m.init_c_w, kd, rng);
  m.decoder = LstmParams::random(config.emb_dim, config.hidden, rng);
  m.output_w = Tensor(Shape{V, config.hidden});
  m.output_b = Tensor(Shape{V});
  fill_uniform(m.output_w, 0.1, rng);
  // At unit scale each recurrent layer shrinks its input, and per-document
  // signal fades before it reaches the decoder.
  visit(m, [&](const std::string& name, Tensor& t) {
    if (name.ends_with(".weight") && !name.starts_with("output")) {
      for (auto& v : t.values) v *= config.weight_gain;
    }
  });
  return m;
}

std::vector<NamedTensor> ProcessLm::named_params() {
  std::vector<NamedTensor> out;
  visit(*this, [&](const std::string& name, Tensor& t) { out.push_back({name, &t}); });
  return out;
}

std::size_t ProcessLm::parameter_count() const {
  std::size_t n = 0;
  visit(*this, [&](const std::string&, const Tensor& t) { n += t.size(); });
  return n;
}

std::vector<std::vector<std::size_t>> ProcessLm::encode(const ProcessDoc& doc) const {
  std::vector<std::vector<std::size_t>> out;
  out.reserve(doc.size());
  for (const auto& s : doc.sentences) out.push_back(vocab.encode(s));
  return out;
}

Vocabulary build_vocabulary(const std::vector<ProcessDoc>& docs) {
  std::set<std::string> tokens;
  for (const auto& d : docs) {
    for (const auto& s : d.sentences) tokens.insert(s.begin(), s.end());
  }
  Vocabulary v;
  for (const auto& t : tokens) v.add(t);
  return v;
}

// ---------------------------------------------------------------------------
// Forward pass

std::vector<Var> context_inputs(Tape& tape, const ProcessLm& model,
                                const std::vector<std::vector<std::size_t>>& sentences, const Dropout& dropout) {
  return encode_process(tape, sentences, model.embedding, model.sentence_encoder, model.process_encoder, dropout,
                        model.config.context == ContextMode::Causal);
}

DocForward forward_doc(Tape& tape, const ProcessLm& model, const std::vector<std::vector<std::size_t>>& sentences,
                       const Dropout& dropout) {
  if (sentences.empty()) throw ContractError("cannot score an empty process");
  DocForward out;
  const std::vector<Var> processed = context_inputs(tape, model, sentences, dropout);
  OnLstmOptions options;
  options.master_input = model.config.master_input;
  out.onlstm = on_lstm_forward(tape, processed, model.onlstm, options, dropout);

  Var table = tape.param(model.embedding);
  Var out_w = tape.param(model.output_w);
  Var out_b = tape.param(model.output_b);
  Var hw = tape.param(model.init_h_w), hb = tape.param(model.init_h_b);
  Var cw = tape.param(model.init_c_w), cb = tape.param(model.init_c_b);

  std::vector<Var> losses;
  for (std::size_t l = 0; l < sentences.size(); ++l) {
    Var context = l == 0 ? tape.param(model.start_context) : out.onlstm.outputs[l - 1];
    context = dropout.apply(tape, context);
    LstmState state{add(matmul(hw, context), hb), add(matmul(cw, context), cb)};
    std::vector<Var> token_losses;
    std::size_t prev = Vocabulary::kBos;
    for (std::size_t n = 0; n <= sentences[l].size(); ++n) {
      const std::size_t target = n < sentences[l].size() ? sentences[l][n] : Vocabulary::kEos;
      Var x = dropout.apply(tape, gather_row(table, prev));
      state = lstm_step(tape, x, state.h, state.c, model.decoder);
      Var logits = add(matmul(out_w, dropout.apply(tape, state.h)), out_b);
      token_losses.push_back(cross_entropy(logits, target));
      prev = target;
    }
    out.tokens += token_losses.size();
    losses.push_back(sum(concat(token_losses)));
  }
  out.sentence_nll = losses;
  out.total = sum(concat(losses));
  return out;
}

Var sentence_nll(Tape& tape, const ProcessLm& model, const ProcessDoc& doc, std::size_t index) {
  if (index >= doc.size()) {
    throw ContractError("sentence index " + std::to_string(index) + " out of range for a process of " +
                        std::to_string(doc.size()) + " sentences");
  }
  return forward_doc(tape, model, model.encode(doc)).sentence_nll[index];
}

NllTotal corpus_nll(const ProcessLm& model, const std::vector<ProcessDoc>& docs) {
  std::vector<NllTotal> per_doc(docs.size());
  parallel_for(docs.size(), [&](std::size_t i) {
    Tape tape;
    DocForward f = forward_doc(tape, model, model.encode(docs[i]));
    per_doc[i] = {tape.scalar(f.total), f.tokens};
  });
  NllTotal total;
  for (const auto& d : per_doc) {
    total.nll += d.nll;
    total.tokens += d.tokens;
  }
  return total;
}

double perplexity(const ProcessLm& model, const std::vector<ProcessDoc>& docs) {
  if (docs.empty()) throw ContractError("perplexity of an empty document list");
  const NllTotal t = corpus_nll(model, docs);
  return std::exp(t.nll / static_cast<double>(t.tokens));
}

// ---------------------------------------------------------------------------
// Training

double clip_gradients(std::vector<std::vector<double>>& grads, double max_norm) {
  double sq = 0.0;
  for (const auto& g : grads) {
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double s = max_norm / norm;
    for (auto& g : grads) {
      for (auto& v : g) v *= s;
    }
  }
  return norm;
}

double train_step(ProcessLm& model, const std::vector<const ProcessDoc*>& batch) {
  if (batch.empty()) throw ContractError("empty training batch");
  Rng drop_rng(mix_seed(model.config.seed, 0xd00d0000ULL + model.step));
  const Dropout dropout{model.config.dropout, &drop_rng};
  std::vector<std::vector<std::vector<std::size_t>>> encoded;
  encoded.reserve(batch.size());
  for (const auto* d : batch) encoded.push_back(model.encode(*d));

  Tape tape;
  std::vector<Var> totals;
  std::size_t tokens = 0;
  for (const auto& doc : encoded) {
    DocForward f = forward_doc(tape, model, doc, dropout);
    totals.push_back(f.total);
    tokens += f.tokens;
  }
  Var loss = scale(sum(concat(totals)), 1.0 / static_cast<double>(tokens));
  const double value = tape.scalar(loss);
  if (!std::isfinite(value)) {
    throw TrainingDiverged("loss became " + std::to_string(value) + " at step " + std::to_string(model.step) +
                           " (epoch " + std::to_string(model.epoch) + ", lr " + std::to_string(model.learning_rate) +
                           ")");
  }
  tape.backward(loss);

  auto params = model.named_params();
  std::vector<std::vector<double>> grads(params.size());
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto g = tape.gradient_of(*params[k].tensor);
    if (g && !g->empty()) grads[k].assign(g->begin(), g->end());
  }
  clip_gradients(grads, model.config.clip_norm);
  if (model.config.optimizer == Optimizer::Sgd) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& values = params[k].tensor->values;
      for (std::size_t i = 0; i < grads[k].size(); ++i) values[i] -= model.learning_rate * grads[k][i];
    }
  } else {
    constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    if (model.adam_m.empty()) {
      for (const auto& p : params) {
        model.adam_m.emplace_back(p.tensor->size(), 0.0);
        model.adam_v.emplace_back(p.tensor->size(), 0.0);
      }
    }
    const double t = static_cast<double>(model.step + 1);
    const double c1 = 1.0 - std::pow(b1, t), c2 = 1.0 - std::pow(b2, t);
    for (std::size_t k = 0; k < params.size(); ++k) {
      auto& values = params[k].tensor->values;
      auto& m = model.adam_m[k];
      auto& v = model.adam_v[k];
      for (std::size_t i = 0; i < grads[k].size(); ++i) {
        const double g = grads[k][i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        values[i] -= model.learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    }
  }
  ++model.step;
  return value;
}

TrainResult train(const std::vector<ProcessDoc>& train_docs, const std::vector<ProcessDoc>& valid_docs,
                  const LmConfig& config, const Tensor* pretrained, std::optional<ProcessLm> resume,
                  const std::function<void(const EpochMetrics&)>& on_epoch) {
  if (train_docs.empty()) throw ContractError("training split is empty");
  config.validate();
  TrainResult result{resume ? std::move(*resume) : ProcessLm::create(config, build_vocabulary(train_docs), pretrained),
                     {}};
  ProcessLm& model = result.model;
  if (resume) {
    // Architecture comes from the checkpoint; the schedule from the caller.
    model.config.epochs = config.epochs;
    model.config.dropout = config.dropout;
    model.config.clip_norm = config.clip_norm;
    model.config.batch_size = config.batch_size;
  }

  std::vector<std::size_t> order(train_docs.size());
  for (std::size_t e = 0; e < config.epochs; ++e) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    Rng shuffle_rng(mix_seed(model.config.seed, 0xe0000000ULL + model.epoch));
    shuffle_rng.shuffle(order);

    double nll_sum = 0.0;
    std::size_t token_sum = 0;
    for (std::size_t b = 0; b < order.size(); b += model.config.batch_size) {
      std::vector<const ProcessDoc*> batch;
      std::size_t tokens = 0;
      for (std::size_t k = b; k < std::min(order.size(), b + model.config.batch_size); ++k) {
        batch.push_back(&train_docs[order[k]]);
        tokens += train_docs[order[k]].token_count() + train_docs[order[k]].size();
      }
      const double mean = train_step(model, batch);
      nll_sum += mean * static_cast<double>(tokens);
      token_sum += tokens;
    }
    ++model.epoch;

    EpochMetrics m;
    m.epoch = model.epoch;
    m.step = model.step;
    m.train_ppl = std::exp(nll_sum / static_cast<double>(token_sum));
    if (!valid_docs.empty()) {
      m.valid_ppl = perplexity(model, valid_docs);
      if (!std::isfinite(m.valid_ppl)) throw TrainingDiverged("validation perplexity is not finite");
      if (model.best_valid_ppl > 0.0 && m.valid_ppl >= model.best_valid_ppl) {
        model.learning_rate *= 0.5;
      } else {
        model.best_valid_ppl = m.valid_ppl;
      }
    }
    m.learning_rate = model.learning_rate;
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);
  }
  return result;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {
constexpr const char* kMagic = "procstruct-checkpoint 1";

void write_values(std::ostream& out, const std::vector<double>& values) {
  for (double v : values) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, sizeof bits);
    unsigned char bytes[8];
    for (int b = 0; b < 8; ++b) bytes[b] = static_cast<unsigned char>(bits >> (8 * b));
    out.write(reinterpret_cast<const char*>(bytes), 8);
  }
}

void read_values(std::istream& in, std::vector<double>& values, const std::string& what) {
  for (auto& v : values) {
    unsigned char bytes[8];
    in.read(reinterpret_cast<char*>(bytes), 8);
    if (in.gcount() != 8) throw FormatError("truncated data for '" + what + "'");
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= static_cast<std::uint64_t>(bytes[b]) << (8 * b);
    std::memcpy(&v, &bits, sizeof v);
  }
}

}  // namespace

void save_checkpoint(std::ostream& out, const ProcessLm& model) {
  json header;
  header["config"] = config_to_json(model.config);
  header["vocabulary"] = model.vocab.tokens();
  header["step"] = model.step;
  header["epoch"] = model.epoch;
  header["learning_rate"] = model.learning_rate;
  header["best_valid_ppl"] = model.best_valid_ppl;
  json tensors = json::array();
  std::vector<const Tensor*> order;
  ProcessLm::visit(model, [&](const std::string& name, const Tensor& t) {
    tensors.push_back(json{{"name", name}, {"shape", t.shape}});
    order.push_back(&t);
  });
  header["tensors"] = tensors;
  header["adam_state"] = !model.adam_m.empty();
  const std::string text = header.dump();
  out << kMagic << '\n' << text.size() << '\n' << text << '\n';
  for (const Tensor* t : order) write_values(out, t->values);
  for (const auto& m : model.adam_m) write_values(out, m);
  for (const auto& v : model.adam_v) write_values(out, v);
  if (!out) throw Error("failed to write checkpoint");
}

void save_checkpoint(const std::string& path, const ProcessLm& model) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  save_checkpoint(out, model);
}

ProcessLm load_checkpoint(std::istream& in) {
  std::string magic;
  std::getline(in, magic);
  if (magic != kMagic) throw FormatError("not a checkpoint file (bad magic line)");
  std::string len_line;
  std::getline(in, len_line);
  std::size_t len = 0;
  try {
    len = std::stoul(len_line);
  } catch (const std::exception&) {
    throw FormatError("checkpoint header length is not a number");
  }
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  if (static_cast<std::size_t>(in.gcount()) != len || in.get() != '\n') throw FormatError("truncated checkpoint header");
  json header;
  try {
    header = json::parse(text);
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }

  try {
    const LmConfig config = config_from_json(header.at("config"));
    Vocabulary vocab = Vocabulary::from_tokens(header.at("vocabulary").get<std::vector<std::string>>());
    ProcessLm model = ProcessLm::create(config, std::move(vocab));
    model.step = header.at("step").get<std::uint64_t>();
    model.epoch = header.at("epoch").get<std::uint64_t>();
    model.learning_rate = header.at("learning_rate").get<double>();
    model.best_valid_ppl = header.at("best_valid_ppl").get<double>();

    std::map<std::string, Tensor*> by_name;
    ProcessLm::visit(model, [&](const std::string& name, Tensor& t) { by_name[name] = &t; });
    const auto& tensors = header.at("tensors");
    if (tensors.size() != by_name.size()) throw FormatError("checkpoint tensor count mismatch");
    for (const auto& entry : tensors) {
      const auto name = entry.at("name").get<std::string>();
      auto it = by_name.find(name);
      if (it == by_name.end()) throw FormatError("unexpected tensor '" + name + "' in checkpoint");
      Tensor& t = *it->second;
      if (entry.at("shape").get<Shape>() != t.shape) {
        throw FormatError("tensor '" + name + "' has shape " + shape_string(entry.at("shape").get<Shape>()) +
                          ", expected " + shape_string(t.shape));
      }
      read_values(in, t.values, name);
    }
    if (header.at("adam_state").get<bool>()) {
      std::vector<std::size_t> sizes;
      ProcessLm::visit(model, [&](const std::string&, const Tensor& t) { sizes.push_back(t.size()); });
      for (auto* moments : {&model.adam_m, &model.adam_v}) {
        for (std::size_t n : sizes) {
          moments->emplace_back(n, 0.0);
          read_values(in, moments->back(), "optimizer state");
        }
      }
    }
    if (in.peek() != std::char_traits<char>::eof()) throw FormatError("trailing bytes after checkpoint data");
    return model;
  } catch (const json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
}

ProcessLm load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint '" + path + "'");
  return load_checkpoint(in);
}

std::string config_json(const LmConfig& config) { return config_to_json(config).dump(); }

}  // namespace procstruct
