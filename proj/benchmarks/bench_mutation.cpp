// Per-sample cost of one mutation run versus a full per-target traversal.
// The single run touches every class at once; the traversal pays one
// optimization per candidate target.

#include <benchmark/benchmark.h>

#include "istr/dataset.hpp"
#include "istr/model.hpp"
#include "istr/steps.hpp"

namespace {

struct Fixture {
  istr::Dataset data;
  istr::Model model;

  Fixture()
      : data(istr::synth_digits(64, 11)),
        model(istr::Model::build(
            istr::ModelArch::preset("3Conv+2FC", data.image_shape(),
                                    data.class_count),
            21)) {
    istr::TrainConfig tc;
    tc.epochs = 1;
    tc.lr = 0.01f;
    istr::train(model, data, tc);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

void BM_MutationRun(benchmark::State& state) {
  Fixture& f = fixture();
  int budget = static_cast<int>(state.range(0));
  for (auto _ : state) {
    istr::MutationResult r = istr::steps_opposite(
        f.model, f.data.image(0), f.data.labels[0], nullptr, 1.0f / 255.0f,
        budget, /*stop_at_flip=*/false);
    benchmark::DoNotOptimize(r.epochs_run);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_MutationRun)->Arg(20)->Arg(50);

void BM_TargetTraversal(benchmark::State& state) {
  Fixture& f = fixture();
  int budget = static_cast<int>(state.range(0));
  for (auto _ : state) {
    istr::TraversalResult r = istr::steps_unconstrained(
        f.model, f.data.image(0), f.data.labels[0], 1.0f / 255.0f, budget);
    benchmark::DoNotOptimize(r.optimization_runs);
  }
  state.SetItemsProcessed(state.iterations());
}
BENCHMARK(BM_TargetTraversal)->Arg(20)->Arg(50);

}  // namespace
