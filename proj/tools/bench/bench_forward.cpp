#include <chrono>
#include <cstdio>
#include <cstdlib>

#include "dynmask/model.hpp"

using namespace dynmask;

int main(int argc, char** argv) {
  ModelConfig cfg;
  cfg.channels = argc > 1 ? std::atoi(argv[1]) : 32;
  MaskModel<float> model(cfg, 1);
  std::vector<std::uint8_t> rgb(224 * 224 * 3);
  for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = static_cast<std::uint8_t>(i * 31 % 251);
  const auto img = image_tensor<float>(rgb, 224, 224);
  PixelBox box{40, 50, 100, 90};
  for (int rep = 0; rep < 3; ++rep) {
    auto t0 = std::chrono::steady_clock::now();
    auto pyr = model.backbone().forward(img);
    auto roi = model.rfpn().roi_input(pyr, box);
    auto p = model.msm().forward(roi);
    auto ladder = model.rfpn().forward(pyr, box, roi, 4);
    auto t1 = std::chrono::steady_clock::now();
    auto loss = ops::add(ops::mean(ladder.mask_probs[3]), ops::mean(ladder.soft_edges[3]));
    loss = ops::add(loss, ops::select(p, 2));
    loss.backward();
    auto t2 = std::chrono::steady_clock::now();
    std::printf("C=%d fwd %.1f ms bwd %.1f ms params %zu msm %zu\n", cfg.channels,
                std::chrono::duration<double, std::milli>(t1 - t0).count(),
                std::chrono::duration<double, std::milli>(t2 - t1).count(),
                model.params().parameter_count(), model.params().parameter_count("msm."));
    model.params().zero_grad();
  }
}
