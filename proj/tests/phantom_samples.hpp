#pragma once

#include <cmath>
#include <numeric>

#include "gliopipe/phantom.hpp"
#include "gliopipe/preprocess.hpp"
#include "gliopipe/train.hpp"

namespace phantom_samples {

// In-memory network inputs for phantom patients [first, first + n).
inline gliopipe::SampleSet make(const gliopipe::PhantomConfig& cfg, std::size_t first, std::size_t n,
                                gliopipe::Sequence seq, int dim, gliopipe::View view, std::size_t size) {
  using namespace gliopipe;
  SampleSet out;
  for (std::size_t i = first; i < first + n; ++i) {
    const PhantomPatient p = generate_patient(cfg, i);
    const SegmentationMask mask = canonicalize_mask(p.seg);
    const VolumeGrid& vol = seq == Sequence::t1 ? p.t1 : (seq == Sequence::t1c ? p.t1c : p.flair);
    const EncodedVolume enc = encode_subregions(vol, mask);
    Sample s;
    s.patient_id = p.patient_id;
    s.label = p.recorded_label;
    s.image = dim == 2 ? extract_view_slice(enc, mask, view, size).image : extract_volume_input(enc, mask, size).image;
    out.push_back(std::move(s));
  }
  return out;
}

struct OverfitResult {
  int steps = 0;
  double final_loss = 0.0;
  bool reached = false;
};

// Repeats one batch until the training loss falls below `target`.
inline OverfitResult overfit(const gliopipe::nn::ResNetSpec& spec, const gliopipe::SampleSet& samples, double lr,
                             int max_steps, double target, std::uint64_t seed) {
  using namespace gliopipe;
  nn::ResNet<float> model(spec, seed);
  TrainConfig tc;
  tc.learning_rate = lr;
  tc.weight_decay = 0.0;
  Trainer trainer(model, tc, ClassWeights{});
  std::vector<std::size_t> idx(samples.size());
  std::iota(idx.begin(), idx.end(), 0);
  const nn::Tensor<float> batch = make_batch(samples, idx, spec.dim);
  std::vector<int> labels;
  for (const auto& s : samples) labels.push_back(s.label);
  OverfitResult r;
  for (int step = 0; step < max_steps; ++step) {
    RandomStream rs(mix_key(seed, 0xD209, static_cast<std::uint64_t>(step)));
    r.final_loss = trainer.step(batch, labels, &rs);
    r.steps = step + 1;
    if (r.final_loss < target) {
      r.reached = true;
      break;
    }
  }
  return r;
}

}  // namespace phantom_samples
