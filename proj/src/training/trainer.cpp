#include <chrono>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>
#include <ostream>

#include "rrwnet/adam.hpp"
#include "rrwnet/training.hpp"

namespace rrwnet::train {

EarlyStopping::EarlyStopping(std::int64_t patience)
    : patience_(patience), best_(std::numeric_limits<double>::infinity()) {
  if (patience <= 0) throw std::invalid_argument("EarlyStopping: patience must be positive");
}

bool EarlyStopping::update(std::int64_t epoch, double value) {
  if (value < best_) {
    best_ = value;
    best_epoch_ = epoch;
    return true;
  }
  return false;
}

std::string format_log_line(const EpochRecord& r) {
  char buf[160];
  std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g,%.3f", static_cast<long long>(r.epoch), r.train_loss,
                r.val_loss, r.best_so_far, r.seconds);
  return buf;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> holdout_split(std::vector<std::size_t> indices,
                                                                            double validation_fraction,
                                                                            std::uint64_t seed) {
  if (!(validation_fraction > 0 && validation_fraction < 1)) {
    throw std::invalid_argument("holdout_split: fraction must lie in (0,1)");
  }
  if (indices.size() < 2) throw std::invalid_argument("holdout_split: need at least two samples");
  std::mt19937_64 rng(seed);
  for (std::size_t i = indices.size(); i > 1; --i) {
    std::uniform_int_distribution<std::size_t> pick(0, i - 1);
    std::swap(indices[i - 1], indices[pick(rng)]);
  }
  auto n_val = static_cast<std::size_t>(std::lround(validation_fraction * static_cast<double>(indices.size())));
  n_val = std::clamp<std::size_t>(n_val, 1, indices.size() - 1);
  std::vector<std::size_t> val(indices.begin(), indices.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> tr(indices.begin() + static_cast<std::ptrdiff_t>(n_val), indices.end());
  std::sort(val.begin(), val.end());
  std::sort(tr.begin(), tr.end());
  return {tr, val};
}

namespace {

Tensor<float> to_tensor(const FloatImage& r) {
  return Tensor<float>({r.channels, r.height, r.width}, r.data);
}

Tensor<float> mask_tensor(const Mask& m) {
  std::vector<float> v(m.data.size());
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = m.data[i] ? 1.0f : 0.0f;
  return Tensor<float>({m.height, m.width}, std::move(v));
}

ad::AdamHyper hyper_of(const TrainConfig& c) {
  ad::AdamHyper h;
  h.learning_rate = c.learning_rate;
  h.beta1 = c.beta1;
  h.beta2 = c.beta2;
  return h;
}

}  // namespace

PreparedSample prepare_sample(const FundusSample& sample, std::size_t size_multiple) {
  data::PadSpec spec;
  PreparedSample p;
  p.image = to_tensor(data::pad_to_multiple(sample.image, size_multiple, &spec));
  p.gt = to_tensor(data::pad_to_multiple(sample.gt, size_multiple));
  p.roi = mask_tensor(data::pad_mask(sample.roi, spec));
  return p;
}

Trainer Trainer::create(const TrainConfig& config) {
  config.validate();
  Trainer t;
  t.network = config.network();
  t.params = nn::init_parameters<float>(t.network, config.seed);
  t.optimizer = ad::make_adam_state(t.params.tensors(), hyper_of(config));
  return t;
}

Trainer Trainer::resume(const nn::ModelCheckpoint& ckpt) {
  Trainer t;
  t.network = ckpt.config;
  t.params = nn::cast_parameters<float>(ckpt.params, true);
  if (ckpt.optimizer) {
    t.optimizer = *ckpt.optimizer;
  } else {
    t.optimizer = ad::make_adam_state(t.params.tensors(), ad::AdamHyper{});
  }
  return t;
}

double Trainer::step(const PreparedSample& sample) {
  params.zero_grad();
  const auto stages = nn::variant_forward(sample.image, params, network);
  auto loss = total_loss(stages, sample.gt, sample.roi, network.K);
  const double value = loss.item();
  if (!std::isfinite(value)) {
    throw NumericFailure("non-finite training loss (" + std::to_string(value) + ") at optimizer step " +
                         std::to_string(optimizer.step_count + 1));
  }
  loss.backward();
  auto tensors = params.tensors();
  ad::adam_step(tensors, optimizer);
  return value;
}

double Trainer::evaluate(const PreparedSample& sample) const {
  ad::NoGradGuard guard;
  const auto stages = nn::variant_forward(sample.image, params, network);
  return total_loss(stages, sample.gt, sample.roi, network.K).item();
}

nn::ModelCheckpoint Trainer::snapshot(const nn::Provenance& provenance, bool with_optimizer) const {
  nn::ModelCheckpoint c;
  c.config = network;
  c.params = nn::cast_parameters<float>(params, false);
  c.provenance = provenance;
  if (with_optimizer) c.optimizer = optimizer;
  return c;
}

TrainResult train(const std::vector<FundusSample>& training, const std::vector<FundusSample>& validation,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  if (training.empty()) throw std::invalid_argument("train: empty training set");
  if (validation.empty() && !hooks.validation_override) {
    throw std::invalid_argument("train: empty validation set");
  }

  Trainer trainer = hooks.initial ? Trainer::resume(*hooks.initial) : Trainer::create(config);
  const std::size_t multiple = trainer.network.size_multiple();

  std::vector<PreparedSample> val_prepared;
  if (!hooks.validation_override) {
    for (const auto& s : validation) val_prepared.push_back(prepare_sample(s, multiple));
  }

  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);

  EarlyStopping stopper(config.early_stop_patience);
  TrainResult result;
  nn::Provenance prov{config.seed, 0, hooks.fold, 0.0};
  result.best = trainer.snapshot(prov, false);

  const std::size_t steps = hooks.steps_per_epoch ? std::min(hooks.steps_per_epoch, order.size()) : order.size();
  for (std::int64_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double train_sum = 0;
    for (std::size_t i = 0; i < steps; ++i) {
      const auto sample = augment(training[order[i]], config.augmentation, rng);
      try {
        train_sum += trainer.step(prepare_sample(sample, multiple));
      } catch (const NumericFailure&) {
        if (hooks.diagnostic_path) {
          nn::save_model(*hooks.diagnostic_path, trainer.snapshot({config.seed, epoch, hooks.fold, NAN}, true));
        }
        throw;
      }
    }

    double val_loss;
    if (hooks.validation_override) {
      val_loss = hooks.validation_override(epoch);
    } else {
      double sum = 0;
      for (const auto& p : val_prepared) sum += trainer.evaluate(p);
      val_loss = sum / static_cast<double>(val_prepared.size());
    }
    if (!std::isfinite(val_loss)) {
      if (hooks.diagnostic_path) {
        nn::save_model(*hooks.diagnostic_path, trainer.snapshot({config.seed, epoch, hooks.fold, val_loss}, true));
      }
      throw NumericFailure("non-finite validation loss at epoch " + std::to_string(epoch));
    }

    if (stopper.update(epoch, val_loss)) {
      result.best = trainer.snapshot({config.seed, epoch, hooks.fold, val_loss}, true);
    }
    EpochRecord rec{epoch, train_sum / static_cast<double>(steps), val_loss, stopper.best(),
                    std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count()};
    result.log.push_back(rec);
    if (hooks.log) *hooks.log << format_log_line(rec) << '\n' << std::flush;
    result.stopped_epoch = epoch;
    if (stopper.should_stop(epoch)) break;
  }
  return result;
}

}  // namespace rrwnet::train
