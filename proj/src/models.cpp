#include "fusenet/models.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace fusenet {

namespace {

Mlp::Spec mlp_spec(const ModelSpec& spec, std::size_t in) {
    Mlp::Spec s;
    s.in = in;
    s.hidden = spec.hidden;
    s.out = spec.n_classes;
    s.batchnorm = spec.batchnorm;
    s.dropout = spec.dropout;
    s.bn_momentum = spec.bn_momentum;
    s.bn_epsilon = spec.bn_epsilon;
    return s;
}

void check_batch(const ModelSpec& spec, const Batch& batch) {
    if (batch.features.size() != spec.in_widths.size()) {
        throw ContractError("batch has " + std::to_string(batch.features.size()) +
                            " modalities, model expects " + std::to_string(spec.in_widths.size()));
    }
    for (std::size_t k = 0; k < batch.features.size(); ++k) {
        if (batch.features[k].cols != spec.in_widths[k]) {
            throw ShapeError("modality " + std::to_string(k + 1) + " width " +
                             std::to_string(batch.features[k].cols) + " does not match model " +
                             std::to_string(spec.in_widths[k]));
        }
    }
}

}  // namespace

AlphaState::AlphaState(std::size_t n_mods, std::size_t layers)
    : n_modalities(n_mods), n_layers(layers) {
    // start as plain averages: 1/n at layer 0, 1/(n+1) where the central
    // path joins
    const double first = 1.0 / static_cast<double>(n_mods);
    const double rest = 1.0 / static_cast<double>(n_mods + 1);
    for (std::size_t layer = 0; layer < layers; ++layer) {
        for (std::size_t k = 0; k < n_mods; ++k) {
            Param p(1, 1);
            p.value.a[0] = layer == 0 ? first : rest;
            modality.push_back(std::move(p));
        }
        if (layer > 0) {
            Param p(1, 1);
            p.value.a[0] = rest;
            central.push_back(std::move(p));
        }
    }
}

void AlphaState::collect_params(std::vector<Param*>& out) {
    for (Param& p : modality) out.push_back(&p);
    for (Param& p : central) out.push_back(&p);
}

void AlphaState::collect_state(std::vector<NamedTensor>& out) {
    for (std::size_t layer = 0; layer < n_layers; ++layer) {
        for (std::size_t k = 0; k < n_modalities; ++k) {
            out.push_back({"alpha.l" + std::to_string(layer) + ".modality_" +
                               std::to_string(k + 1),
                           1, 1, &mod(layer, k).value.a});
        }
        if (layer > 0) {
            out.push_back({"alpha.l" + std::to_string(layer) + ".central", 1, 1,
                           &cen(layer).value.a});
        }
    }
}

TensorRef central_fuse(Graph& g, std::optional<TensorRef> h_central,
                       std::span<const TensorRef> h_modalities, AlphaState& alphas,
                       std::size_t layer) {
    if (h_modalities.size() != alphas.n_modalities) {
        throw ContractError("central_fuse: " + std::to_string(h_modalities.size()) +
                            " representations for " + std::to_string(alphas.n_modalities) +
                            " modality weights");
    }
    if (layer >= alphas.n_layers) throw ContractError("central_fuse: layer index out of range");
    if (layer == 0 && h_central.has_value()) {
        throw ContractError("central_fuse: layer 0 takes no central representation");
    }
    if (layer > 0 && !h_central.has_value()) {
        throw ContractError("central_fuse: central representation required at layer " +
                            std::to_string(layer));
    }
    TensorRef acc;
    bool have = false;
    if (h_central) {
        acc = g.smul(g.leaf(alphas.cen(layer)), *h_central);
        have = true;
    }
    for (std::size_t k = 0; k < h_modalities.size(); ++k) {
        TensorRef term = g.smul(g.leaf(alphas.mod(layer, k)), h_modalities[k]);
        acc = have ? g.add(acc, term) : term;
        have = true;
    }
    return acc;
}

std::vector<AlphaLayerReport> alpha_report(const AlphaState& alphas) {
    std::vector<AlphaLayerReport> report;
    for (std::size_t layer = 0; layer < alphas.n_layers; ++layer) {
        AlphaLayerReport lr;
        lr.layer = layer;
        if (layer > 0) {
            lr.entries.push_back({"central", alphas.cen(layer).value.a[0], 0.0});
        }
        for (std::size_t k = 0; k < alphas.n_modalities; ++k) {
            lr.entries.push_back(
                {"modality_" + std::to_string(k + 1), alphas.mod(layer, k).value.a[0], 0.0});
        }
        double denom = 0.0;
        for (const AlphaShare& e : lr.entries) denom += std::abs(e.raw);
        if (denom == 0.0) {
            lr.degenerate = true;
            const double uniform = 1.0 / static_cast<double>(lr.entries.size());
            for (AlphaShare& e : lr.entries) e.share = uniform;
        } else {
            for (AlphaShare& e : lr.entries) e.share = std::abs(e.raw) / denom;
        }
        report.push_back(std::move(lr));
    }
    return report;
}

TensorRef head_loss(Graph& g, TensorRef logits, const Matrix& labels, LossKind kind,
                    double pos_weight) {
    switch (kind) {
        case LossKind::softmax_ce:
            return g.softmax_cross_entropy(logits, labels);
        case LossKind::weighted_bce:
            return g.weighted_bce(logits, labels, pos_weight);
    }
    throw ContractError("unknown loss kind");
}

TensorRef Model::loss(Graph& g, const ForwardOut& out, const Matrix& labels,
                      LossBreakdown* breakdown) {
    TensorRef l = head_loss(g, out.prediction, labels, spec_.loss, spec_.pos_weight);
    if (breakdown) {
        breakdown->central = g.scalar_value(l);
        breakdown->per_modality.clear();
        breakdown->total = breakdown->central;
    }
    return l;
}

TensorRef global_loss(Graph& g, const ForwardOut& out, const Matrix& labels, LossKind kind,
                      double pos_weight, LossBreakdown* breakdown) {
    TensorRef central = head_loss(g, out.prediction, labels, kind, pos_weight);
    TensorRef total = central;
    std::vector<double> per;
    for (TensorRef uni : out.unimodal) {
        TensorRef lk = head_loss(g, uni, labels, kind, pos_weight);
        per.push_back(g.scalar_value(lk));
        total = g.add(total, lk);
    }
    if (breakdown) {
        breakdown->central = g.scalar_value(central);
        breakdown->per_modality = std::move(per);
        breakdown->total = g.scalar_value(total);
    }
    return total;
}

// ---------------------------------------------------------------------------
// unimodal / early / late
// ---------------------------------------------------------------------------

UnimodalModel::UnimodalModel(ModelSpec spec, std::size_t modality_index, Rng& rng)
    : Model(std::move(spec)),
      modality_(modality_index),
      net_(mlp_spec(spec_, spec_.in_widths.at(modality_index)), rng) {}

ForwardOut UnimodalModel::forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) {
    check_batch(spec_, batch);
    TensorRef x = g.constant(batch.features[modality_]);
    return {net_.forward(g, x, mode, dropout_rng), {}};
}

std::vector<Param*> UnimodalModel::params() {
    std::vector<Param*> out;
    net_.collect_params(out);
    return out;
}

std::vector<NamedTensor> UnimodalModel::named_state() {
    std::vector<NamedTensor> out;
    net_.collect_state("unimodal" + std::to_string(modality_ + 1), out);
    return out;
}

EarlyFusionModel::EarlyFusionModel(ModelSpec spec, Rng& rng)
    : Model(std::move(spec)),
      net_(mlp_spec(spec_, std::accumulate(spec_.in_widths.begin(), spec_.in_widths.end(),
                                           std::size_t{0})),
           rng) {}

ForwardOut EarlyFusionModel::forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) {
    check_batch(spec_, batch);
    std::vector<TensorRef> parts;
    for (const Matrix& m : batch.features) parts.push_back(g.constant(m));
    TensorRef x = g.concat_cols(parts);
    return {net_.forward(g, x, mode, dropout_rng), {}};
}

std::vector<Param*> EarlyFusionModel::params() {
    std::vector<Param*> out;
    net_.collect_params(out);
    return out;
}

std::vector<NamedTensor> EarlyFusionModel::named_state() {
    std::vector<NamedTensor> out;
    net_.collect_state("early", out);
    return out;
}

LateFusionModel::LateFusionModel(ModelSpec spec, Rng& rng)
    : Model(std::move(spec)),
      nets_([&] {
          std::vector<Mlp> nets;
          for (std::size_t w : spec_.in_widths) nets.emplace_back(mlp_spec(spec_, w), rng);
          return nets;
      }()),
      head_(spec_.in_widths.size() * spec_.n_classes, spec_.n_classes, Activation::none, rng) {}

ForwardOut LateFusionModel::forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) {
    check_batch(spec_, batch);
    std::vector<TensorRef> logits;
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        TensorRef x = g.constant(batch.features[k]);
        logits.push_back(nets_[k].forward(g, x, mode, dropout_rng));
    }
    TensorRef concat = g.concat_cols(logits);
    return {dense_forward(g, head_, concat), {}};
}

std::vector<Param*> LateFusionModel::params() {
    std::vector<Param*> out;
    for (Mlp& n : nets_) n.collect_params(out);
    out.push_back(&head_.W);
    out.push_back(&head_.b);
    return out;
}

std::vector<NamedTensor> LateFusionModel::named_state() {
    std::vector<NamedTensor> out;
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        nets_[k].collect_state("late.unimodal" + std::to_string(k + 1), out);
    }
    out.push_back({"late.head.W", head_.W.value.rows, head_.W.value.cols, &head_.W.value.a});
    out.push_back({"late.head.b", 1, head_.b.value.cols, &head_.b.value.a});
    return out;
}

// ---------------------------------------------------------------------------
// GMU
// ---------------------------------------------------------------------------

GmuModel::GmuModel(ModelSpec spec, Rng& rng)
    : Model(std::move(spec)),
      w1_([&]() -> Param {
          if (spec_.in_widths.size() != 2) {
              throw ConfigError("gmu supports exactly 2 modalities, got " +
                                std::to_string(spec_.in_widths.size()));
          }
          const std::size_t gate = spec_.hidden.empty() ? spec_.n_classes : spec_.hidden[0];
          return Param(glorot_uniform(spec_.in_widths[0], gate, rng));
      }()),
      w2_(glorot_uniform(spec_.in_widths[1], w1_.value.cols, rng)),
      wz_(glorot_uniform(spec_.in_widths[0] + spec_.in_widths[1], w1_.value.cols, rng)),
      head_([&] {
          Mlp::Spec s = mlp_spec(spec_, w1_.value.cols);
          s.hidden.assign(spec_.hidden.empty() ? spec_.hidden.begin() : spec_.hidden.begin() + 1,
                          spec_.hidden.end());
          return s;
      }(), rng) {}

TensorRef GmuModel::fuse(Graph& g, TensorRef x1, TensorRef x2) {
    TensorRef h1 = g.tanh(g.matmul(x1, g.leaf(w1_)));
    TensorRef h2 = g.tanh(g.matmul(x2, g.leaf(w2_)));
    const TensorRef both[] = {x1, x2};
    TensorRef z = g.sigmoid(g.matmul(g.concat_cols(both), g.leaf(wz_)));
    TensorRef ones = g.constant(Matrix(g.value(z).rows, g.value(z).cols,
                                       std::vector<double>(g.value(z).size(), 1.0)));
    return g.add(g.mul(z, h1), g.mul(g.sub(ones, z), h2));
}

ForwardOut GmuModel::forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) {
    check_batch(spec_, batch);
    TensorRef fused = fuse(g, g.constant(batch.features[0]), g.constant(batch.features[1]));
    return {head_.forward(g, fused, mode, dropout_rng), {}};
}

std::vector<Param*> GmuModel::params() {
    std::vector<Param*> out = {&w1_, &w2_, &wz_};
    head_.collect_params(out);
    return out;
}

std::vector<NamedTensor> GmuModel::named_state() {
    std::vector<NamedTensor> out;
    out.push_back({"gmu.W1", w1_.value.rows, w1_.value.cols, &w1_.value.a});
    out.push_back({"gmu.W2", w2_.value.rows, w2_.value.cols, &w2_.value.a});
    out.push_back({"gmu.Wz", wz_.value.rows, wz_.value.cols, &wz_.value.a});
    head_.collect_state("gmu.head", out);
    return out;
}

// ---------------------------------------------------------------------------
// CentralNet
// ---------------------------------------------------------------------------

CentralNetModel::CentralNetModel(ModelSpec spec, Rng& rng)
    : Model(std::move(spec)), central_drop_(spec_.dropout) {
    const std::size_t n = spec_.in_widths.size();
    if (n == 0) throw ContractError("centralnet needs at least one modality");

    aligned_width_ = *std::max_element(spec_.in_widths.begin(), spec_.in_widths.end());
    const bool project = spec_.alignment == AlignMode::linear_proj;
    if (!project) {
        for (std::size_t w : spec_.in_widths) {
            if (w != aligned_width_) {
                throw ShapeError("centralnet with zero_pad alignment expects pre-aligned "
                                 "features; modality width " +
                                 std::to_string(w) + " vs " + std::to_string(aligned_width_));
            }
        }
    }

    for (std::size_t w : spec_.in_widths) nets_.emplace_back(mlp_spec(spec_, w), rng);

    if (project) {
        for (std::size_t w : spec_.in_widths) {
            projections_.emplace_back(glorot_uniform(w, aligned_width_, rng));
        }
    }

    // central operating cells mirror the unimodal stack
    std::vector<std::size_t> widths;
    widths.push_back(aligned_width_);
    widths.insert(widths.end(), spec_.hidden.begin(), spec_.hidden.end());
    widths.push_back(spec_.n_classes);
    for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
        central_dense_.emplace_back(widths[i], widths[i + 1], Activation::none, rng);
        if (spec_.batchnorm && i + 2 < widths.size()) {
            central_bn_.emplace_back(widths[i + 1], spec_.bn_momentum, spec_.bn_epsilon);
        }
    }

    // fusion layers: 0 (features) .. L (prediction logits)
    alphas_ = AlphaState(n, central_dense_.size() + 1);
}

ForwardOut CentralNetModel::forward(Graph& g, const Batch& batch, Mode mode, Rng& dropout_rng) {
    check_batch(spec_, batch);
    const std::size_t n = nets_.size();
    const std::size_t depth = central_dense_.size();

    // unimodal passes, keeping every hidden representation
    std::vector<TensorRef> inputs(n);
    std::vector<std::vector<TensorRef>> taps(n);
    std::vector<TensorRef> logits(n);
    for (std::size_t k = 0; k < n; ++k) {
        inputs[k] = g.constant(batch.features[k]);
        logits[k] = nets_[k].forward(g, inputs[k], mode, dropout_rng, &taps[k]);
    }

    // level-0 representations, projected when alignment is learned
    std::vector<TensorRef> level0(n);
    for (std::size_t k = 0; k < n; ++k) {
        level0[k] = projections_.empty() ? inputs[k]
                                         : g.matmul(inputs[k], g.leaf(projections_[k]));
    }

    TensorRef fused = central_fuse(g, std::nullopt, level0, alphas_, 0);
    for (std::size_t i = 1; i <= depth; ++i) {
        TensorRef c = dense_forward(g, central_dense_[i - 1], fused);
        const bool is_head = (i == depth);
        if (!is_head) {
            if (spec_.batchnorm) c = batchnorm_forward(g, central_bn_[i - 1], c, mode);
            c = g.relu(c);
            c = dropout_forward(g, central_drop_, c, mode, dropout_rng);
        }
        // unimodal representation at this level: hidden block output, or the
        // prediction logits at the top
        std::vector<TensorRef> level(n);
        for (std::size_t k = 0; k < n; ++k) level[k] = taps[k][i - 1];
        fused = central_fuse(g, c, level, alphas_, i);
    }

    return {fused, logits};
}

TensorRef CentralNetModel::loss(Graph& g, const ForwardOut& out, const Matrix& labels,
                                LossBreakdown* breakdown) {
    return global_loss(g, out, labels, spec_.loss, spec_.pos_weight, breakdown);
}

std::vector<Param*> CentralNetModel::params() {
    std::vector<Param*> out;
    for (Mlp& net : nets_) net.collect_params(out);
    for (DenseLayer& d : central_dense_) {
        out.push_back(&d.W);
        out.push_back(&d.b);
    }
    for (BatchNormLayer& b : central_bn_) {
        out.push_back(&b.gamma);
        out.push_back(&b.beta);
    }
    for (Param& p : projections_) out.push_back(&p);
    alphas_.collect_params(out);
    return out;
}

std::vector<NamedTensor> CentralNetModel::named_state() {
    std::vector<NamedTensor> out;
    for (std::size_t k = 0; k < nets_.size(); ++k) {
        nets_[k].collect_state("centralnet.unimodal" + std::to_string(k + 1), out);
    }
    for (std::size_t i = 0; i < central_dense_.size(); ++i) {
        const std::string base = "centralnet.central.dense" + std::to_string(i);
        out.push_back({base + ".W", central_dense_[i].W.value.rows,
                       central_dense_[i].W.value.cols, &central_dense_[i].W.value.a});
        out.push_back({base + ".b", 1, central_dense_[i].b.value.cols,
                       &central_dense_[i].b.value.a});
    }
    for (std::size_t i = 0; i < central_bn_.size(); ++i) {
        const std::string base = "centralnet.central.bn" + std::to_string(i);
        const std::size_t d = central_bn_[i].running_mean.size();
        out.push_back({base + ".gamma", 1, d, &central_bn_[i].gamma.value.a});
        out.push_back({base + ".beta", 1, d, &central_bn_[i].beta.value.a});
        out.push_back({base + ".running_mean", 1, d, &central_bn_[i].running_mean});
        out.push_back({base + ".running_var", 1, d, &central_bn_[i].running_var});
    }
    for (std::size_t k = 0; k < projections_.size(); ++k) {
        out.push_back({"centralnet.proj" + std::to_string(k + 1), projections_[k].value.rows,
                       projections_[k].value.cols, &projections_[k].value.a});
    }
    alphas_.collect_state(out);
    return out;
}

// ---------------------------------------------------------------------------

void moddrop_apply(Batch& batch, double drop_prob, Rng& rng) {
    if (!(drop_prob >= 0.0 && drop_prob <= 1.0)) {
        throw ContractError("moddrop probability must be in [0,1]");
    }
    const std::size_t n_samples = batch.size();
    for (std::size_t i = 0; i < n_samples; ++i) {
        for (Matrix& feats : batch.features) {
            if (rng.bernoulli(drop_prob)) {
                std::fill_n(feats.row(i), feats.cols, 0.0);
            }
        }
    }
}

std::string arch_stream_name(const std::string& method) {
    return method == "moddrop" ? "late" : method;
}

bool is_valid_method(const std::string& method, std::size_t n_modalities) {
    if (method == "early" || method == "late" || method == "moddrop" ||
        method == "centralnet") {
        return true;
    }
    if (method == "gmu") return n_modalities == 2;
    if (method.rfind("unimodal_", 0) == 0) {
        const std::string idx = method.substr(9);
        if (idx.empty() || idx.find_first_not_of("0123456789") != std::string::npos) return false;
        const std::size_t k = std::stoul(idx);
        return k >= 1 && k <= n_modalities;
    }
    return false;
}

std::unique_ptr<Model> make_model(const std::string& method, const ModelSpec& spec, Rng& rng) {
    if (method == "early") return std::make_unique<EarlyFusionModel>(spec, rng);
    if (method == "late" || method == "moddrop") {
        return std::make_unique<LateFusionModel>(spec, rng);
    }
    if (method == "gmu") return std::make_unique<GmuModel>(spec, rng);
    if (method == "centralnet") return std::make_unique<CentralNetModel>(spec, rng);
    if (method.rfind("unimodal_", 0) == 0) {
        const std::size_t k = std::stoul(method.substr(9));
        if (k < 1 || k > spec.in_widths.size()) {
            throw ConfigError("method " + method + ": modality index out of range");
        }
        return std::make_unique<UnimodalModel>(spec, k - 1, rng);
    }
    throw ConfigError("unknown fusion method '" + method + "'");
}

}  // namespace fusenet
