// SPDX-License-Identifier: Apache-2.0
#include "fact/experiment.hpp"

namespace fact {

namespace {
constexpr std::uint64_t kStreamSeed = 0x57'4E41;
constexpr std::uint64_t kInitSeed = 0x1'417;
}  // namespace

SessionStream make_stream(const RunConfig& cfg) {
  const auto [train, test] = load_datasets(cfg);
  return build_stream(train, test, cfg.protocol, Rng::derive(cfg.seed, kStreamSeed).next_u64());
}

BaseRun train_base_from_config(const RunConfig& cfg) {
  cfg.validate();
  SessionStream stream = make_stream(cfg);
  Rng init = Rng::derive(cfg.seed, kInitSeed);
  EmbeddingNet net = make_embedding_net(stream.base_train.dim(), cfg.mid_dim, cfg.embed_dim, init);
  CosineHead head = make_cosine_head(cfg.protocol.num_base, cfg.resolved_num_virtual(), cfg.embed_dim, cfg.scale, init);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  tc.loss.num_base = cfg.protocol.num_base;
  tc.loss.num_virtual = cfg.resolved_num_virtual();
  TrainResult trained = train_base(stream.base_train, std::move(net), std::move(head), tc);
  // Classification from here on uses class prototypes in place of the trained weights.
  SessionState state = replace_with_prototypes(make_session_state(std::move(trained.net), std::move(trained.head)),
                                               stream.base_train);
  return BaseRun{std::move(stream), std::move(state), std::move(trained.report)};
}

}  // namespace fact
