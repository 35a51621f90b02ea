#include <chrono>
#include <cstdio>
#include <functional>

#include "dynmask/maskops.hpp"
#include "dynmask/ops.hpp"
#include "dynmask/params.hpp"

using namespace dynmask;

static void time_it(const char* name, const std::function<Tensor<float>()>& f) {
  for (int rep = 0; rep < 2; ++rep) {
    auto t0 = std::chrono::steady_clock::now();
    auto y = f();
    auto t1 = std::chrono::steady_clock::now();
    ops::sum(y).backward();
    auto t2 = std::chrono::steady_clock::now();
    if (rep) std::printf("%-22s fwd %7.2f ms  bwd %7.2f ms\n", name,
                std::chrono::duration<double, std::milli>(t1 - t0).count(),
                std::chrono::duration<double, std::milli>(t2 - t1).count());
  }
}

int main(int argc, char** argv) {
  const int c = argc > 1 ? std::atoi(argv[1]) : 8;
  const int r = 112;
  ParamStore<float> ps(3);
  auto x = ps.create_weight("x", Shape{c, r, r}, 1);
  auto x2 = ps.create_weight("x2", Shape{2 * c, r, r}, 1);
  auto w = ps.create_weight("w", Shape{c, c, 3, 3}, 9 * c);
  auto b = ps.create_zeros("b", Shape{c});
  auto wo = ps.create_weight("wo", Shape{18, 2 * c, 3, 3}, 9 * c);
  auto bo = ps.create_zeros("bo", Shape{18});
  auto off = ps.create_weight("off", Shape{18, r, r}, 1);
  auto m = ps.create_weight("m", Shape{r, r}, 1);
  auto h = ps.create_weight("h", Shape{c, r / 2, r / 2}, 1);
  time_it("conv3x3 c->c", [&] { return ops::conv2d(x, w, b, 1, 1); });
  time_it("conv3x3 2c->18", [&] { return ops::conv2d(x2, wo, bo, 1, 1); });
  time_it("deform c->c", [&] { return ops::deform_conv2d(x, w, b, off); });
  time_it("upsample bilinear", [&] { return ops::upsample_bilinear2x(h); });
  time_it("relu", [&] { return ops::relu(x); });
  time_it("concat", [&] { return ops::concat_channels<float>({x, x}); });
  time_it("soft edge", [&] { return soft_laplacian_edge(m); });
}
