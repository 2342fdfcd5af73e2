#pragma once

#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fusenet/data.hpp"
#include "fusenet/layers.hpp"

namespace fusenet {

enum class LossKind { softmax_ce, weighted_bce };

struct ModelSpec {
    std::vector<std::size_t> in_widths;  // per modality, as the dataset provides them
    std::vector<std::size_t> hidden;
    std::size_t n_classes = 0;
    bool batchnorm = true;
    double dropout = 0.5;
    double bn_momentum = 0.9;
    double bn_epsilon = 1e-5;
    LossKind loss = LossKind::softmax_ce;
    double pos_weight = 2.0;
    AlignMode alignment = AlignMode::zero_pad;
};

// Trainable fusion scalars, one set per fusion layer. Layer 0 weights only
// the modality representations (n scalars); layers 1..L also weight the
// central path (n+1 scalars). All scalars are unconstrained and take part in
// the joint gradient update.
struct AlphaState {
    std::size_t n_modalities = 0;
    std::size_t n_layers = 0;  // fusion layers 0..L, so L+1 in total

    // modality scalars flattened [layer * n_modalities + k]; central scalars
    // indexed [layer - 1]
    std::vector<Param> modality;
    std::vector<Param> central;

    AlphaState() = default;
    AlphaState(std::size_t n_mods, std::size_t layers);

    Param& mod(std::size_t layer, std::size_t k) { return modality[layer * n_modalities + k]; }
    const Param& mod(std::size_t layer, std::size_t k) const {
        return modality[layer * n_modalities + k];
    }
    Param& cen(std::size_t layer) { return central[layer - 1]; }
    const Param& cen(std::size_t layer) const { return central[layer - 1]; }

    void collect_params(std::vector<Param*>& out);
    void collect_state(std::vector<NamedTensor>& out);
};

// One row of Eq-style fusion: alpha_C * h_C + sum_k alpha_k * h_k. h_central
// must be absent exactly at layer 0. All representations must share a shape.
TensorRef central_fuse(Graph& g, std::optional<TensorRef> h_central,
                       std::span<const TensorRef> h_modalities, AlphaState& alphas,
                       std::size_t layer);

struct AlphaShare {
    std::string source;  // "central" or "modality_k"
    double raw = 0.0;
    double share = 0.0;  // |alpha| / sum of layer |alpha|; reporting only
};

struct AlphaLayerReport {
    std::size_t layer = 0;
    bool degenerate = false;  // all-zero layer reported as uniform shares
    std::vector<AlphaShare> entries;
};

std::vector<AlphaLayerReport> alpha_report(const AlphaState& alphas);

struct LossBreakdown {
    double central = 0.0;
    std::vector<double> per_modality;
    double total = 0.0;  // central + sum(per_modality), same summation order
};

struct ForwardOut {
    TensorRef prediction;              // logits of the model's answer
    std::vector<TensorRef> unimodal;   // per-modality head logits (multi-head models)
};

// Per-head classification loss.
TensorRef head_loss(Graph& g, TensorRef logits, const Matrix& labels, LossKind kind,
                    double pos_weight);

// Common interface over the fusion architectures.
class Model {
  public:
    virtual ~Model() = default;

    virtual ForwardOut forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) = 0;

    // Scalar loss node; multi-head models add their unimodal losses and can
    // report the decomposition.
    virtual TensorRef loss(Graph& g, const ForwardOut& out, const Matrix& labels,
                           LossBreakdown* breakdown);

    virtual std::vector<Param*> params() = 0;
    virtual std::vector<NamedTensor> named_state() = 0;
    virtual const AlphaState* alpha_state() const { return nullptr; }

    const ModelSpec& spec() const { return spec_; }

  protected:
    explicit Model(ModelSpec spec) : spec_(std::move(spec)) {}
    ModelSpec spec_;
};

class UnimodalModel : public Model {
  public:
    UnimodalModel(ModelSpec spec, std::size_t modality_index, Rng& rng);
    ForwardOut forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) override;
    std::vector<Param*> params() override;
    std::vector<NamedTensor> named_state() override;

    Mlp& net() { return net_; }

  private:
    std::size_t modality_;
    Mlp net_;
};

// Concatenation of all modality features into one network.
class EarlyFusionModel : public Model {
  public:
    EarlyFusionModel(ModelSpec spec, Rng& rng);
    ForwardOut forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) override;
    std::vector<Param*> params() override;
    std::vector<NamedTensor> named_state() override;

    Mlp& net() { return net_; }

  private:
    Mlp net_;
};

// One network per modality; a single dense head over the concatenated
// unimodal logits. Also the backbone for ModDrop, which only changes the
// training-time input masking.
class LateFusionModel : public Model {
  public:
    LateFusionModel(ModelSpec spec, Rng& rng);
    ForwardOut forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) override;
    std::vector<Param*> params() override;
    std::vector<NamedTensor> named_state() override;

    Mlp& unimodal(std::size_t k) { return nets_[k]; }
    DenseLayer& fusion_head() { return head_; }

  private:
    std::vector<Mlp> nets_;
    DenseLayer head_;
};

// Gated multimodal unit over exactly two modalities:
//   h1 = tanh(W1 x1), h2 = tanh(W2 x2), z = sigmoid(Wz [x1, x2]),
//   fused = z .* h1 + (1 - z) .* h2
// followed by a dense classifier stack.
class GmuModel : public Model {
  public:
    GmuModel(ModelSpec spec, Rng& rng);
    ForwardOut forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) override;
    std::vector<Param*> params() override;
    std::vector<NamedTensor> named_state() override;

    // fused representation only, for property tests
    TensorRef fuse(Graph& g, TensorRef x1, TensorRef x2);

  private:
    Param w1_, w2_, wz_;
    Mlp head_;
};

// CentralNet: per-modality networks plus a central network whose every layer
// consumes a learned weighted sum of the unimodal hidden representations and
// its own previous output. The final weighted sum over prediction logits is
// fusion layer L; its output is the model's answer. Trained with the
// multi-objective loss (central + every unimodal head).
class CentralNetModel : public Model {
  public:
    CentralNetModel(ModelSpec spec, Rng& rng);
    ForwardOut forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) override;
    TensorRef loss(Graph& g, const ForwardOut& out, const Matrix& labels,
                   LossBreakdown* breakdown) override;
    std::vector<Param*> params() override;
    std::vector<NamedTensor> named_state() override;
    const AlphaState* alpha_state() const override { return &alphas_; }

    AlphaState& alphas() { return alphas_; }
    Mlp& unimodal(std::size_t k) { return nets_[k]; }
    DenseLayer& central_dense(std::size_t i) { return central_dense_[i]; }
    std::size_t aligned_width() const { return aligned_width_; }

  private:
    std::vector<Mlp> nets_;
    std::vector<DenseLayer> central_dense_;
    std::vector<BatchNormLayer> central_bn_;
    DropoutLayer central_drop_;
    std::vector<Param> projections_;  // per modality, only in linear_proj mode
    AlphaState alphas_;
    std::size_t aligned_width_ = 0;
};

// Multi-objective loss shared by CentralNetModel::loss and usable directly:
// total = central head loss + sum of unimodal head losses.
TensorRef global_loss(Graph& g, const ForwardOut& out, const Matrix& labels, LossKind kind,
                      double pos_weight, LossBreakdown* breakdown);

// Zeroes whole modality feature vectors independently per sample and per
// modality with probability drop_prob. Training-time regularization only.
void moddrop_apply(Batch& batch, double drop_prob, Rng& rng);

// method: unimodal_<k> (1-based), early, late, moddrop, gmu, centralnet
std::unique_ptr<Model> make_model(const std::string& method, const ModelSpec& spec, Rng& rng);

// Stream name used to derive init/dropout rng for a method. ModDrop shares
// the late-fusion architecture, so with drop probability 0 the two runs are
// identical draw for draw.
std::string arch_stream_name(const std::string& method);

bool is_valid_method(const std::string& method, std::size_t n_modalities);

}  // namespace fusenet
