#pragma once

#include <map>
#include <string>
#include <vector>

#include "otloc/numerics.hpp"
#include "otloc/representation.hpp"

namespace otloc {

// Synthetic compositional-action corpus: each class is a fixed temporal
// sequence of sub-event prototypes drawn from a shared pool, placed inside
// background noise.
struct GenSpec {
  int num_classes = 8;
  int sub_events_per_class = 3;
  int prototype_pool_size = 12;
  int feature_dim = 32;
  int clips_per_video = 256;
  int instances_min = 1;
  int instances_max = 3;
  int train_videos = 24;
  int test_videos = 40;
  double noise_sigma = 0.3;
  double background_sigma = 1.0;
  bool prototype_sharing = true;
  uint64_t seed = 0;
};

struct CorpusManifest {
  std::vector<std::string> class_names;
  std::vector<std::vector<int>> class_sub_events;  // prototype indices per class
  std::map<std::string, std::string> split_files;  // split name -> jsonl file
  GenSpec spec;
};

struct Corpus {
  CorpusManifest manifest;
  std::map<std::string, std::vector<FeatureSequence>> splits;
};

// Unit-row prototype pool, orthonormalized when pool_size <= feature_dim
// (otherwise raw unit vectors, with a warning). Deterministic under the seed.
Matrix make_prototype_pool(const GenSpec& spec);

Corpus generate_corpus(const GenSpec& spec);

// manifest.json plus one JSON-Lines file per split; feature payloads are
// base64 little-endian doubles, so write -> read is value-exact.
void write_corpus(const Corpus& corpus, const std::string& dir);
Corpus read_corpus(const std::string& dir);

}  // namespace otloc
