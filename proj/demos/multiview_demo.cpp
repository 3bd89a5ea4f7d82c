// Trains the linear head on a handful of noisy lane scenes with single-view
// and multi-view pooling, then reports held-out mean IoU for each.
//
//   multiview_demo [noise_std] [epochs]

#include <cstdio>
#include <string>

#include "std2p/std2p.hpp"

using namespace std2p;

int main(int argc, char** argv) {
  const double noise = argc > 1 ? std::stod(argv[1]) : 4.0;
  const std::size_t epochs = argc > 2 ? std::stoul(argv[2]) : 40;

  synth::LaneSceneParams scene;
  scene.frames = 11;
  scene.channels = 4;
  scene.num_classes = 4;
  scene.noise_std = noise;
  SamplingPolicy policy;
  policy.interval = 1;
  policy.sample_size = 11;

  std::printf("noise %.2f, %zu epochs, K = %zu\n", noise, epochs, policy.sample_size);
  std::printf("%-8s %-8s %-8s %s\n", "view", "spatial", "temporal", "mean IoU (8 held-out scenes)");
  const learn::ModelConfig configs[] = {{PoolMode::avg, PoolMode::avg, learn::ViewMode::single},
                                        {PoolMode::avg, PoolMode::avg, learn::ViewMode::multi},
                                        {PoolMode::max, PoolMode::avg, learn::ViewMode::multi},
                                        {PoolMode::avg, PoolMode::max, learn::ViewMode::multi}};
  for (const auto& cfg : configs) {
    std::vector<learn::Sample> train;
    for (std::uint64_t seed = 100; seed < 110; ++seed)
      train.push_back(learn::make_sample(synth::generate(synth::make_lane_scene(scene, seed)), policy, 0.4, cfg.view));
    auto head = learn::LinearHead::random(scene.num_classes, scene.channels, 0);
    learn::OptimizerState opt{0.1, 0.9, 5e-4, {}};
    learn::train(train, head, opt, epochs, cfg);

    eval::ConfusionMatrix cm(scene.num_classes);
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
      auto sample = learn::make_sample(synth::generate(synth::make_lane_scene(scene, seed)), policy, 0.4, cfg.view);
      eval::accumulate(cm, learn::argmax_labels(learn::forward(head, sample, cfg).output), sample.labels);
    }
    std::printf("%-8s %-8s %-8s %.4f\n", learn::to_string(cfg.view), to_string(cfg.spatial),
                to_string(cfg.temporal), eval::metrics(cm).mean_iou);
  }
}
