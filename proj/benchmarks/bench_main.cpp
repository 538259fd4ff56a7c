#include <benchmark/benchmark.h>

#include <random>

#include "degan/layers.hpp"
#include "degan/losses.hpp"
#include "degan/models.hpp"
#include "degan/optimizer.hpp"
#include "degan/pipelines.hpp"

namespace {

using namespace degan;

Tensor random_tensor(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor t(std::move(s));
  for (double& v : t.data) v = u(rng);
  return t;
}

std::vector<double> init_params(const Layer& layer) {
  std::vector<double> p(layer.param_count());
  std::vector<double> s(layer.state_count());
  Engine rng(1);
  layer.init(p, s, rng);
  return p;
}

// Conv 16 -> 32 channels, 4x4 kernel, stride 2 on an 8x8 map (desk discriminator layer).
void BM_Conv2dForward(benchmark::State& state) {
  const Conv2d conv(16, 32, {4, 2, 1});
  const auto params = init_params(conv);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 8, 8, 16}, 2);
  ForwardArgs args;
  args.params = params;
  for (auto _ : state) benchmark::DoNotOptimize(conv.forward(x, args, nullptr));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Conv2dForward)->Arg(32)->Arg(128);

void BM_Conv2dBackward(benchmark::State& state) {
  const Conv2d conv(16, 32, {4, 2, 1});
  const auto params = init_params(conv);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 8, 8, 16}, 2);
  ForwardArgs args;
  args.params = params;
  args.training = true;
  LayerCache cache;
  const Tensor y = conv.forward(x, args, &cache);
  const Tensor g = random_tensor(y.shape, 3);
  std::vector<double> grad(params.size());
  for (auto _ : state) benchmark::DoNotOptimize(conv.backward(g, params, cache, grad));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_Conv2dBackward)->Arg(32)->Arg(128);

void BM_ConvTransposeForward(benchmark::State& state) {
  const ConvTranspose2d deconv(32, 16, {4, 2, 1});
  const auto params = init_params(deconv);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 4, 4, 32}, 2);
  ForwardArgs args;
  args.params = params;
  for (auto _ : state) benchmark::DoNotOptimize(deconv.forward(x, args, nullptr));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ConvTransposeForward)->Arg(32)->Arg(128);

struct DeskGan {
  Model classifier;
  Model generator;
  Model discriminator;
  Tensor real;

  explicit DeskGan(std::size_t batch)
      : classifier(freeze(build_classifier(classifier_spec(), 1))),
        generator(build_generator(gan_spec(ArchFamily::dcgan_generator), 2)),
        discriminator(build_discriminator(gan_spec(ArchFamily::dcgan_discriminator), 3)),
        real(random_tensor({batch, 16, 16, 1}, 4)) {}

  static ArchSpec classifier_spec() {
    ArchSpec s;
    s.image = {16, 16, 1};
    s.num_classes = 5;
    return s;
  }
  static ArchSpec gan_spec(ArchFamily family) {
    ArchSpec s;
    s.family = family;
    s.image = {16, 16, 1};
    s.latent_dim = 32;
    return s;
  }
};

// One alternating DeGAN update (D step then G step) at desk scale.
void BM_GanStep(benchmark::State& state) {
  const auto batch = static_cast<std::size_t>(state.range(0));
  DeskGan gan(batch);
  Adam g_opt(gan.generator.param_count(), {2e-4, 0.5});
  Adam d_opt(gan.discriminator.param_count(), {2e-4, 0.5});
  const RangeAdapter adapter = gan.generator.metadata().output_adapter;
  Engine rng(5);
  for (auto _ : state) {
    const Tensor z = sample_latent({32}, batch, rng).values;
    Trace g_trace;
    const Tensor fake = gan.generator.forward_train(z, g_trace);
    auto d_grad = gan.discriminator.zero_grad();
    discriminator_objective(gan.discriminator, gan.real, fake, d_grad, 1e-12);
    for (double& v : d_grad) v = -v;
    d_opt.step(gan.discriminator, d_grad);
    const auto fb = generator_feedback(gan.discriminator, gan.classifier, adapter, fake, 0.1, 1.0,
                                       AdversarialForm::non_saturating, 1e-12);
    auto g_grad = gan.generator.zero_grad();
    gan.generator.backward(g_trace, fb.grad_fake, g_grad);
    g_opt.step(gan.generator, g_grad);
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_GanStep)->Arg(32)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_ClassifierForward(benchmark::State& state) {
  DeskGan gan(1);
  const Tensor x = random_tensor({static_cast<std::size_t>(state.range(0)), 16, 16, 1}, 6);
  for (auto _ : state) benchmark::DoNotOptimize(gan.classifier.forward(x));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_ClassifierForward)->Arg(64)->Arg(256);

void BM_KdLossGrad(benchmark::State& state) {
  const Tensor s = random_tensor({128, 10}, 7);
  const Tensor t = random_tensor({128, 10}, 8);
  for (auto _ : state) benchmark::DoNotOptimize(kd_loss_grad(s, t, 20.0));
}
BENCHMARK(BM_KdLossGrad);

}  // namespace

BENCHMARK_MAIN();
