#include "metcc/metric.hpp"

#include <cmath>
#include <ostream>
#include <string>

#include "metcc/error.hpp"

namespace metcc::metric {
namespace {

// Activations of one network branch over a batch of column inputs.
struct BranchCache {
  Matrix x;     // d x B
  Matrix z;     // h x B, pre-activation
  Matrix keep;  // h x B dropout multipliers (empty when dropout is off)
  Matrix a;     // h x B, post-activation (after dropout)
  Matrix out;   // k x B
};

BranchCache forward_batch(const TripletNetParams& params, Matrix x, double dropout_p, Rng* rng) {
  BranchCache c;
  c.x = std::move(x);
  c.z = (params.w1 * c.x).colwise() + params.b1;
  c.a = c.z.cwiseMax(0.0);
  if (rng != nullptr && dropout_p > 0.0) {
    const double scale = 1.0 / (1.0 - dropout_p);
    c.keep.resize(c.z.rows(), c.z.cols());
    for (Index j = 0; j < c.keep.cols(); ++j)
      for (Index i = 0; i < c.keep.rows(); ++i) c.keep(i, j) = rng->uniform() < dropout_p ? 0.0 : scale;
    c.a = c.a.cwiseProduct(c.keep);
  }
  c.out = (params.w2 * c.a).colwise() + params.b2;
  return c;
}

// Accumulates dLoss/dparams given dLoss/dout (k x B) for one branch.
void backward_batch(const TripletNetParams& params, const BranchCache& c, const Matrix& grad_out,
                    TripletNetParams& grad) {
  grad.w2.noalias() += grad_out * c.a.transpose();
  grad.b2 += grad_out.rowwise().sum();
  Matrix dz = params.w2.transpose() * grad_out;
  if (c.keep.size() > 0) dz = dz.cwiseProduct(c.keep);
  dz = dz.cwiseProduct((c.z.array() > 0.0).cast<double>().matrix());  // relu'(0) = 0
  grad.w1.noalias() += dz * c.x.transpose();
  grad.b1 += dz.rowwise().sum();
}

Matrix gather_columns(const Matrix& inputs, const IndexList& rows, std::size_t begin, std::size_t end) {
  Matrix out(inputs.cols(), static_cast<Index>(end - begin));
  for (std::size_t i = begin; i < end; ++i) out.col(static_cast<Index>(i - begin)) = inputs.row(rows[i]).transpose();
  return out;
}

void check_batch_inputs(const TripletNetParams& params, const Matrix& inputs, std::size_t batch_size) {
  if (batch_size == 0) throw Error(Errc::kInvalidArgument, "loss_gradient needs a non-empty batch");
  if (inputs.cols() != params.input_dim()) {
    throw Error(Errc::kDimensionMismatch, "inputs have " + std::to_string(inputs.cols()) +
                                              " columns, network expects " + std::to_string(params.input_dim()));
  }
}

Rng* active_rng(const MetricTrainConfig& cfg, Rng* rng) { return cfg.dropout_p > 0.0 ? rng : nullptr; }

template <typename Fn>
void for_each_tensor(TripletNetParams& a, const TripletNetParams& b, Fn fn) {
  fn(a.w1.array(), b.w1.array());
  fn(a.b1.array(), b.b1.array());
  fn(a.w2.array(), b.w2.array());
  fn(a.b2.array(), b.b2.array());
}

class Optimizer {
 public:
  Optimizer(const MetricTrainConfig& cfg, const TripletNetParams& shape)
      : cfg_(cfg),
        m_(TripletNetParams::zeros(shape.input_dim(), shape.hidden(), shape.embed_dim())),
        v_(m_) {}

  void step(TripletNetParams& params, TripletNetParams grad) {
    if (cfg_.optimizer == OptimizerKind::kSgd) {
      grad *= -cfg_.learning_rate;
      params += grad;
      return;
    }
    ++t_;
    const double b1 = cfg_.beta1, b2 = cfg_.beta2;
    for_each_tensor(m_, grad, [&](auto m, auto g) { m = b1 * m + (1.0 - b1) * g; });
    for_each_tensor(v_, grad, [&](auto v, auto g) { v = b2 * v + (1.0 - b2) * g.square(); });
    const double c1 = 1.0 - std::pow(b1, t_), c2 = 1.0 - std::pow(b2, t_);
    const double lr = cfg_.learning_rate, eps = cfg_.epsilon;
    TripletNetParams update = m_;
    for_each_tensor(update, v_, [&](auto u, auto v) { u = -lr * (u / c1) / ((v / c2).sqrt() + eps); });
    params += update;
  }

 private:
  const MetricTrainConfig& cfg_;
  TripletNetParams m_, v_;
  int t_ = 0;
};

const char* loss_name(LossKind k) { return k == LossKind::kTriplet ? "triplet" : "siamese"; }

}  // namespace

bool TripletNetParams::all_finite() const {
  return w1.allFinite() && b1.allFinite() && w2.allFinite() && b2.allFinite();
}

TripletNetParams TripletNetParams::zeros(Index d, Index h, Index k) {
  return {Matrix::Zero(h, d), Vector::Zero(h), Matrix::Zero(k, h), Vector::Zero(k)};
}

TripletNetParams TripletNetParams::initialize(Index d, Index h, Index k, Rng& rng) {
  TripletNetParams p = zeros(d, h, k);
  const double r1 = std::sqrt(6.0 / static_cast<double>(d));
  const double r2 = std::sqrt(6.0 / static_cast<double>(h));
  for (Index j = 0; j < d; ++j)
    for (Index i = 0; i < h; ++i) p.w1(i, j) = rng.uniform(-r1, r1);
  for (Index j = 0; j < h; ++j)
    for (Index i = 0; i < k; ++i) p.w2(i, j) = rng.uniform(-r2, r2);
  return p;
}

TripletNetParams& TripletNetParams::operator+=(const TripletNetParams& o) {
  w1 += o.w1;
  b1 += o.b1;
  w2 += o.w2;
  b2 += o.b2;
  return *this;
}

TripletNetParams& TripletNetParams::operator*=(double s) {
  w1 *= s;
  b1 *= s;
  w2 *= s;
  b2 *= s;
  return *this;
}

void MetricTrainConfig::validate() const {
  auto bad = [](const std::string& msg) { throw Error(Errc::kInvalidArgument, msg); };
  if (loss == LossKind::kSiamese && !(margin > 0)) bad("margin must be > 0");
  if (hidden < 1 || embed_dim < 1) bad("hidden and embed_dim must be >= 1");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) bad("dropout_p must lie in [0, 1)");
  if (!(learning_rate > 0)) bad("learning_rate must be > 0");
  if (epochs < 0) bad("epochs must be >= 0");
  if (batch_triplets < 1 || minibatch < 1) bad("batch_triplets and minibatch must be >= 1");
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && epsilon > 0)) bad("invalid Adam constants");
}

Vector forward(const TripletNetParams& params, const Vector& x, const std::optional<DropoutMask>& mask) {
  if (x.size() != params.input_dim()) throw Error(Errc::kDimensionMismatch, "input length differs from network input dim");
  Vector a = (params.w1 * x + params.b1).cwiseMax(0.0);
  if (mask && mask->p > 0.0) a = (a.array() * mask->keep / (1.0 - mask->p)).matrix();
  return params.w2 * a + params.b2;
}

double triplet_loss(const TripletNetParams& params, const Vector& anchor, const Vector& positive,
                    const Vector& negative) {
  const Vector ga = forward(params, anchor);
  const double d_pos = (ga - forward(params, positive)).norm();
  const double d_neg = (ga - forward(params, negative)).norm();
  return d_pos * d_pos + (d_neg - 1.0) * (d_neg - 1.0);
}

double siamese_loss(const TripletNetParams& params, const Vector& x_i, const Vector& x_j, bool same_class,
                    double margin, SiameseConvention convention) {
  const double d = (forward(params, x_i) - forward(params, x_j)).norm();
  const bool pull = (convention == SiameseConvention::kContrastive) == same_class;
  if (pull) return d * d;
  const double hinge = std::max(0.0, margin - d);
  return hinge * hinge;
}

GradientResult loss_gradient(const TripletNetParams& params, const Matrix& inputs, const TripletBatch& batch,
                             const MetricTrainConfig& cfg, Rng* dropout_rng) {
  const std::size_t n = batch.size();
  check_batch_inputs(params, inputs, n);
  Rng* rng = active_rng(cfg, dropout_rng);
  const auto a = forward_batch(params, gather_columns(inputs, batch.anchors, 0, n), cfg.dropout_p, rng);
  const auto p = forward_batch(params, gather_columns(inputs, batch.positives, 0, n), cfg.dropout_p, rng);
  const auto q = forward_batch(params, gather_columns(inputs, batch.negatives, 0, n), cfg.dropout_p, rng);

  const Matrix diff_pos = a.out - p.out;
  const Matrix diff_neg = a.out - q.out;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix g_neg(diff_neg.rows(), diff_neg.cols());
  double loss = 0.0;
  for (Index j = 0; j < diff_neg.cols(); ++j) {
    const double d_pos2 = diff_pos.col(j).squaredNorm();
    const double d_neg = diff_neg.col(j).norm();
    loss += d_pos2 + (d_neg - 1.0) * (d_neg - 1.0);
    const double coef = d_neg > 0.0 ? 2.0 * (d_neg - 1.0) / d_neg : 0.0;
    g_neg.col(j) = coef * inv_n * diff_neg.col(j);
  }
  const Matrix g_pos = 2.0 * inv_n * diff_pos;

  GradientResult out{TripletNetParams::zeros(params.input_dim(), params.hidden(), params.embed_dim()),
                     loss * inv_n};
  backward_batch(params, a, g_pos + g_neg, out.gradient);
  backward_batch(params, p, -g_pos, out.gradient);
  backward_batch(params, q, -g_neg, out.gradient);
  return out;
}

GradientResult loss_gradient(const TripletNetParams& params, const Matrix& inputs, const PairBatch& batch,
                             const MetricTrainConfig& cfg, Rng* dropout_rng) {
  const std::size_t n = batch.size();
  check_batch_inputs(params, inputs, n);
  Rng* rng = active_rng(cfg, dropout_rng);
  const auto a = forward_batch(params, gather_columns(inputs, batch.first, 0, n), cfg.dropout_p, rng);
  const auto b = forward_batch(params, gather_columns(inputs, batch.second, 0, n), cfg.dropout_p, rng);

  const Matrix diff = a.out - b.out;
  const double inv_n = 1.0 / static_cast<double>(n);
  Matrix g(diff.rows(), diff.cols());
  double loss = 0.0;
  for (Index j = 0; j < diff.cols(); ++j) {
    const bool same = batch.same_class[static_cast<std::size_t>(j)] != 0;
    const bool pull = (cfg.convention == SiameseConvention::kContrastive) == same;
    const double d = diff.col(j).norm();
    double coef = 0.0;
    if (pull) {
      loss += d * d;
      coef = 2.0;
    } else if (d < cfg.margin) {
      loss += (cfg.margin - d) * (cfg.margin - d);
      coef = d > 0.0 ? -2.0 * (cfg.margin - d) / d : 0.0;
    }
    g.col(j) = coef * inv_n * diff.col(j);
  }

  GradientResult out{TripletNetParams::zeros(params.input_dim(), params.hidden(), params.embed_dim()),
                     loss * inv_n};
  backward_batch(params, a, g, out.gradient);
  backward_batch(params, b, -g, out.gradient);
  return out;
}

namespace {

struct ClassIndex {
  std::vector<int> values;
  std::vector<IndexList> members;

  explicit ClassIndex(const std::vector<int>& labels) {
    for (std::size_t i = 0; i < labels.size(); ++i) {
      auto it = std::find(values.begin(), values.end(), labels[i]);
      if (it == values.end()) {
        values.push_back(labels[i]);
        members.emplace_back();
        it = values.end() - 1;
      }
      members[static_cast<std::size_t>(it - values.begin())].push_back(static_cast<Index>(i));
    }
  }

  const IndexList& of(int label) const {
    return members[static_cast<std::size_t>(std::find(values.begin(), values.end(), label) - values.begin())];
  }
};

Index draw_same(const ClassIndex& classes, int label, Index exclude, Rng& rng) {
  const auto& pool = classes.of(label);
  if (pool.size() < 2) return exclude;
  Index pick;
  do {
    pick = pool[rng.below(pool.size())];
  } while (pick == exclude);
  return pick;
}

Index draw_other(const std::vector<int>& labels, int label, Rng& rng) {
  Index pick;
  do {
    pick = static_cast<Index>(rng.below(labels.size()));
  } while (labels[static_cast<std::size_t>(pick)] == label);
  return pick;
}

void require_two_classes(const std::vector<int>& labels) {
  for (int l : labels)
    if (l != labels.front()) return;
  throw Error(Errc::kSingleClassInput, "metric learning needs samples from both classes");
}

}  // namespace

TripletBatch sample_triplets(const std::vector<int>& labels, std::size_t count, Rng& rng) {
  require_two_classes(labels);
  const ClassIndex classes(labels);
  TripletBatch batch;
  for (std::size_t t = 0; t < count; ++t) {
    const auto anchor = static_cast<Index>(rng.below(labels.size()));
    const int label = labels[static_cast<std::size_t>(anchor)];
    batch.anchors.push_back(anchor);
    batch.positives.push_back(draw_same(classes, label, anchor, rng));
    batch.negatives.push_back(draw_other(labels, label, rng));
  }
  return batch;
}

PairBatch sample_pairs(const std::vector<int>& labels, std::size_t count, Rng& rng) {
  require_two_classes(labels);
  const ClassIndex classes(labels);
  PairBatch batch;
  for (std::size_t t = 0; t < count; ++t) {
    const auto first = static_cast<Index>(rng.below(labels.size()));
    const int label = labels[static_cast<std::size_t>(first)];
    const bool same = rng.uniform() < 0.5;
    const Index second = same ? draw_same(classes, label, first, rng) : draw_other(labels, label, rng);
    batch.first.push_back(first);
    batch.second.push_back(second);
    batch.same_class.push_back(labels[static_cast<std::size_t>(second)] == label ? 1 : 0);
  }
  return batch;
}

MetricModel train(const Matrix& x_train, const std::vector<int>& labels, const MetricTrainConfig& cfg) {
  cfg.validate();
  if (static_cast<std::size_t>(x_train.rows()) != labels.size()) {
    throw Error(Errc::kLengthMismatch, "label count differs from training rows");
  }
  if (labels.empty()) throw Error(Errc::kSingleClassInput, "no training samples");
  require_two_classes(labels);
  if (!x_train.allFinite()) throw Error(Errc::kNonFiniteValue, "training input has non-finite values");

  Rng rng(cfg.seed);
  MetricModel model;
  model.config = cfg;
  model.params = TripletNetParams::initialize(x_train.cols(), cfg.hidden, cfg.embed_dim, rng);
  Optimizer optimizer(cfg, model.params);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto count = static_cast<std::size_t>(cfg.batch_triplets);
    const auto step = static_cast<std::size_t>(cfg.minibatch);
    double total = 0.0;
    auto run_steps = [&](const auto& batch, auto slice) {
      for (std::size_t begin = 0; begin < count; begin += step) {
        const std::size_t end = std::min(count, begin + step);
        const auto sub = slice(batch, begin, end);
        auto result = loss_gradient(model.params, x_train, sub, cfg, &rng);
        if (!std::isfinite(result.loss)) {
          model.loss_trace.push_back(result.loss);
          throw DivergenceError("non-finite loss in epoch " + std::to_string(epoch), model.loss_trace);
        }
        total += result.loss * static_cast<double>(end - begin);
        optimizer.step(model.params, std::move(result.gradient));
      }
    };
    if (cfg.loss == LossKind::kTriplet) {
      run_steps(sample_triplets(labels, count, rng), [](const TripletBatch& b, std::size_t lo, std::size_t hi) {
        TripletBatch s;
        s.anchors.assign(b.anchors.begin() + lo, b.anchors.begin() + hi);
        s.positives.assign(b.positives.begin() + lo, b.positives.begin() + hi);
        s.negatives.assign(b.negatives.begin() + lo, b.negatives.begin() + hi);
        return s;
      });
    } else {
      run_steps(sample_pairs(labels, count, rng), [](const PairBatch& b, std::size_t lo, std::size_t hi) {
        PairBatch s;
        s.first.assign(b.first.begin() + lo, b.first.begin() + hi);
        s.second.assign(b.second.begin() + lo, b.second.begin() + hi);
        s.same_class.assign(b.same_class.begin() + lo, b.same_class.begin() + hi);
        return s;
      });
    }
    model.loss_trace.push_back(total / static_cast<double>(count));
    if (!model.params.all_finite()) {
      throw DivergenceError("non-finite parameters after epoch " + std::to_string(epoch), model.loss_trace);
    }
  }
  return model;
}

Embedding embed(const TripletNetParams& params, const Matrix& x) {
  if (x.cols() != params.input_dim()) {
    throw Error(Errc::kDimensionMismatch, "input has " + std::to_string(x.cols()) + " columns, network expects " +
                                              std::to_string(params.input_dim()));
  }
  Embedding e;
  e.recipe = Recipe::kMetcc;
  const Matrix hidden = ((params.w1 * x.transpose()).colwise() + params.b1).cwiseMax(0.0);
  e.values = ((params.w2 * hidden).colwise() + params.b2).transpose();
  return e;
}

dataio::SectionedFile to_file(const MetricModel& model) {
  using dataio::format_double;
  const auto& c = model.config;
  dataio::SectionedFile file;
  auto& s = file.scalars;
  s["format"] = "metcc-net-1";
  s["loss"] = loss_name(c.loss);
  s["margin"] = format_double(c.margin);
  s["convention"] = c.convention == SiameseConvention::kContrastive ? "contrastive" : "literal";
  s["hidden"] = std::to_string(c.hidden);
  s["embed_dim"] = std::to_string(c.embed_dim);
  s["dropout"] = format_double(c.dropout_p);
  s["lr"] = format_double(c.learning_rate);
  s["epochs"] = std::to_string(c.epochs);
  s["batch_triplets"] = std::to_string(c.batch_triplets);
  s["minibatch"] = std::to_string(c.minibatch);
  s["optimizer"] = c.optimizer == OptimizerKind::kAdam ? "adam" : "sgd";
  s["beta1"] = format_double(c.beta1);
  s["beta2"] = format_double(c.beta2);
  s["epsilon"] = format_double(c.epsilon);
  s["seed"] = std::to_string(c.seed);
  file.blocks["w1"] = model.params.w1;
  file.blocks["b1"] = model.params.b1;
  file.blocks["w2"] = model.params.w2;
  file.blocks["b2"] = model.params.b2;
  file.blocks["loss_trace"] =
      Eigen::Map<const Matrix>(model.loss_trace.data(), 1, static_cast<Index>(model.loss_trace.size()));
  return file;
}

MetricModel from_file(const dataio::SectionedFile& file) {
  using dataio::parse_double;
  MetricModel model;
  auto& c = model.config;
  c.loss = file.scalar("loss") == "siamese" ? LossKind::kSiamese : LossKind::kTriplet;
  c.margin = parse_double(file.scalar("margin"));
  c.convention = file.scalar("convention") == "literal" ? SiameseConvention::kLiteral : SiameseConvention::kContrastive;
  c.hidden = std::stoll(file.scalar("hidden"));
  c.embed_dim = std::stoll(file.scalar("embed_dim"));
  c.dropout_p = parse_double(file.scalar("dropout"));
  c.learning_rate = parse_double(file.scalar("lr"));
  c.epochs = std::stoi(file.scalar("epochs"));
  c.batch_triplets = std::stoi(file.scalar("batch_triplets"));
  c.minibatch = std::stoi(file.scalar("minibatch"));
  c.optimizer = file.scalar("optimizer") == "sgd" ? OptimizerKind::kSgd : OptimizerKind::kAdam;
  c.beta1 = parse_double(file.scalar("beta1"));
  c.beta2 = parse_double(file.scalar("beta2"));
  c.epsilon = parse_double(file.scalar("epsilon"));
  c.seed = std::stoull(file.scalar("seed"));
  model.params.w1 = file.block("w1");
  model.params.b1 = file.block("b1");
  model.params.w2 = file.block("w2");
  model.params.b2 = file.block("b2");
  const Matrix& trace = file.block("loss_trace");
  model.loss_trace.assign(trace.data(), trace.data() + trace.size());
  return model;
}

void write_loss_trace(std::ostream& out, const std::vector<double>& trace) {
  out << "epoch\tmean_loss\n";
  for (std::size_t e = 0; e < trace.size(); ++e) out << e << '\t' << dataio::format_double(trace[e]) << '\n';
}

}  // namespace metcc::metric
