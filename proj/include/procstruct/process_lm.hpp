#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "procstruct/corpus.hpp"
#include "procstruct/error.hpp"
#include "procstruct/gradcheck.hpp"
#include "procstruct/on_lstm.hpp"
#include "procstruct/sequence_encoder.hpp"
#include "procstruct/vocabulary.hpp"

namespace procstruct {

// What the ON-LSTM reads at sentence l. The process-level BiLSTM's backward
// half at l has already seen sentence l + 1, which is the decoder's target.
enum class ContextMode {
  Bidirectional,  // full [forward ; backward] state
  Causal,         // process level runs forward only
};

enum class Optimizer {
  Sgd,   // plain SGD on the clipped gradient
  Adam,  // Adam (beta 0.9 / 0.999) on the clipped gradient
};

struct LmConfig {
  std::size_t encoder_layers = 3;
  std::size_t onlstm_layers = 3;
  std::size_t d_model = 64;  // ON-LSTM hidden size
  std::size_t hidden = 32;   // BiLSTM hidden size per direction; also the decoder size
  std::size_t emb_dim = 300;
  std::size_t chunk = 8;
  double dropout = 0.1;
  double learning_rate = 1.0;
  double clip_norm = 0.25;
  std::size_t epochs = 5;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;
  MasterInputMode master_input = MasterInputMode::Independent;
  ContextMode context = ContextMode::Causal;
  Optimizer optimizer = Optimizer::Sgd;
  // Random embedding rows are scaled by this factor; pretrained rows are kept.
  double embed_scale = 10.0;
  // Recurrent and projection weights (not biases, not the output layer) are
  // scaled by this factor after the 1/sqrt(fan) uniform draw.
  double weight_gain = 3.0;

  void validate() const;
  bool operator==(const LmConfig&) const = default;
};

// The config as a JSON object, in the form stored in checkpoints.
std::string config_json(const LmConfig& config);

// Sentence encoder -> process encoder -> stacked ON-LSTM -> per-sentence
// decoder. Sentence l is decoded from the ON-LSTM top state after sentences
// 0..l-1; sentence 0 is decoded from a learned start vector.
struct ProcessLm {
  LmConfig config;
  Vocabulary vocab;

  Tensor embedding;  // [V x emb_dim], shared by encoder and decoder inputs
  StackedBiLstm sentence_encoder;
  StackedBiLstm process_encoder;
  std::vector<OnLstmCellParams> onlstm;
  Tensor start_context;  // [d_model]
  Tensor init_h_w, init_h_b;
  Tensor init_c_w, init_c_b;
  LstmParams decoder;
  Tensor output_w, output_b;  // [V x hidden], [V]

  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double learning_rate = 0.0;
  double best_valid_ppl = 0.0;  // 0 until a validation pass ran
  // Adam moments in visit() order; empty until the first Adam step.
  std::vector<std::vector<double>> adam_m, adam_v;

  // Random initialisation from config.seed. Embedding rows come from
  // `pretrained` when given, else from hashed_embeddings().
  static ProcessLm create(const LmConfig& config, Vocabulary vocab, const Tensor* pretrained = nullptr);

  template <class Self, class F>
  static void visit(Self& self, F&& f) {
    f(std::string("embedding"), self.embedding);
    StackedBiLstm::visit(self.sentence_encoder, "sentence_encoder", f);
    StackedBiLstm::visit(self.process_encoder, "process_encoder", f);
    for (std::size_t k = 0; k < self.onlstm.size(); ++k) {
      OnLstmCellParams::visit(self.onlstm[k], "onlstm.layer" + std::to_string(k), f);
    }
    f(std::string("start_context"), self.start_context);
    f(std::string("init_h.weight"), self.init_h_w);
    f(std::string("init_h.bias"), self.init_h_b);
    f(std::string("init_c.weight"), self.init_c_w);
    f(std::string("init_c.bias"), self.init_c_b);
    LstmParams::visit(self.decoder, "decoder", f);
    f(std::string("output.weight"), self.output_w);
    f(std::string("output.bias"), self.output_b);
  }

  std::vector<NamedTensor> named_params();
  std::size_t parameter_count() const;

  std::vector<std::vector<std::size_t>> encode(const ProcessDoc& doc) const;
};

// Alphabetical vocabulary over all tokens of `docs`, after the reserved ones.
Vocabulary build_vocabulary(const std::vector<ProcessDoc>& docs);

// Process encoding as seen by the ON-LSTM, one vector per sentence.
std::vector<Var> context_inputs(Tape& tape, const ProcessLm& model,
                                const std::vector<std::vector<std::size_t>>& sentences, const Dropout& dropout = {});

struct DocForward {
  std::vector<Var> sentence_nll;  // one per sentence, summed over its tokens and <eos>
  Var total;
  std::size_t tokens = 0;         // predicted tokens including one <eos> per sentence
  OnLstmRun onlstm;
};

DocForward forward_doc(Tape& tape, const ProcessLm& model, const std::vector<std::vector<std::size_t>>& sentences,
                       const Dropout& dropout = {});

// Negative log-likelihood of sentence `index` (0-based) given its
// predecessors, teacher-forced.
Var sentence_nll(Tape& tape, const ProcessLm& model, const ProcessDoc& doc, std::size_t index);

struct NllTotal {
  double nll = 0.0;
  std::size_t tokens = 0;
};

// Summed over documents in order; per-document work may run concurrently.
NllTotal corpus_nll(const ProcessLm& model, const std::vector<ProcessDoc>& docs);
double perplexity(const ProcessLm& model, const std::vector<ProcessDoc>& docs);

// Scales gradients in place so their global L2 norm is at most max_norm.
// Returns the norm before clipping.
double clip_gradients(std::vector<std::vector<double>>& grads, double max_norm);

struct EpochMetrics {
  std::uint64_t epoch = 0;
  std::uint64_t step = 0;
  double train_ppl = 0.0;
  double valid_ppl = 0.0;  // 0 when there is no validation split
  double learning_rate = 0.0;
};

class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

struct TrainResult {
  ProcessLm model;
  std::vector<EpochMetrics> log;
};

// Plain SGD with global-norm clipping; the learning rate halves whenever the
// validation perplexity fails to improve. Runs config.epochs epochs on top of
// `resume` when given (its step and epoch counters continue).
TrainResult train(const std::vector<ProcessDoc>& train_docs, const std::vector<ProcessDoc>& valid_docs,
                  const LmConfig& config, const Tensor* pretrained = nullptr,
                  std::optional<ProcessLm> resume = std::nullopt,
                  const std::function<void(const EpochMetrics&)>& on_epoch = {});

// One SGD update on a batch; returns the mean per-token loss before the update.
double train_step(ProcessLm& model, const std::vector<const ProcessDoc*>& batch);

void save_checkpoint(std::ostream& out, const ProcessLm& model);
void save_checkpoint(const std::string& path, const ProcessLm& model);
ProcessLm load_checkpoint(std::istream& in);
ProcessLm load_checkpoint(const std::string& path);

}  // namespace procstruct
