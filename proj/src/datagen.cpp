#include "otloc/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "json.hpp"

#include "otloc/codec.hpp"

namespace otloc {

namespace {
namespace fs = std::filesystem;

void validate_spec(const GenSpec& spec) {
  if (spec.num_classes < 2) throw ConfigError("gen: need at least 2 classes");
  if (spec.prototype_pool_size < spec.sub_events_per_class) {
    throw ConfigError("gen: prototype pool smaller than sub-events per class");
  }
  if (spec.sub_events_per_class < 1) throw ConfigError("gen: sub_events_per_class >= 1");
  if (spec.instances_min < 1 || spec.instances_max < spec.instances_min) {
    throw ConfigError("gen: bad instances_per_video range");
  }
  if (spec.clips_per_video < 8) throw ConfigError("gen: clips_per_video too small");
  if (!spec.prototype_sharing &&
      spec.prototype_pool_size < spec.num_classes * spec.sub_events_per_class) {
    throw ConfigError(
        "gen: prototype_sharing=false needs pool_size >= classes * sub_events");
  }
}

}  // namespace

Matrix make_prototype_pool(const GenSpec& spec) {
  Rng rng = Rng(spec.seed).fork(1);
  Matrix pool(spec.prototype_pool_size, spec.feature_dim);
  for (double& x : pool.data) x = rng.gaussian();

  if (spec.prototype_pool_size <= spec.feature_dim) {
    // Modified Gram-Schmidt.
    for (int i = 0; i < pool.rows; ++i) {
      for (int j = 0; j < i; ++j) {
        double dot = 0.0;
        for (int k = 0; k < pool.cols; ++k) dot += pool(i, k) * pool(j, k);
        for (int k = 0; k < pool.cols; ++k) pool(i, k) -= dot * pool(j, k);
      }
      double sq = 0.0;
      for (int k = 0; k < pool.cols; ++k) sq += pool(i, k) * pool(i, k);
      double norm = std::sqrt(sq);
      for (int k = 0; k < pool.cols; ++k) pool(i, k) /= norm;
    }
  } else {
    std::cerr << "gen: pool_size " << spec.prototype_pool_size << " > feature_dim "
              << spec.feature_dim << ", falling back to raw unit vectors\n";
    RowNormResult rn = l2_normalize_rows(pool);
    pool = rn.values;
  }
  return pool;
}

namespace {

std::vector<std::vector<int>> assign_sub_events(const GenSpec& spec, Rng& rng) {
  std::vector<std::vector<int>> out(spec.num_classes);
  if (!spec.prototype_sharing) {
    std::vector<int> perm(spec.prototype_pool_size);
    for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
    for (int i = static_cast<int>(perm.size()) - 1; i > 0; --i) {
      std::swap(perm[i], perm[rng.uniform_int(0, i)]);
    }
    for (int c = 0; c < spec.num_classes; ++c) {
      for (int s = 0; s < spec.sub_events_per_class; ++s) {
        out[c].push_back(perm[c * spec.sub_events_per_class + s]);
      }
    }
    return out;
  }

  for (int c = 0; c < spec.num_classes; ++c) {
    std::vector<int> pool(spec.prototype_pool_size);
    for (size_t i = 0; i < pool.size(); ++i) pool[i] = static_cast<int>(i);
    for (int s = 0; s < spec.sub_events_per_class; ++s) {
      int j = rng.uniform_int(s, static_cast<int>(pool.size()) - 1);
      std::swap(pool[s], pool[j]);
      out[c].push_back(pool[s]);
    }
  }
  // The compositional setting requires actual overlap between classes.
  bool shared = false;
  for (int a = 0; a < spec.num_classes && !shared; ++a) {
    for (int b = a + 1; b < spec.num_classes && !shared; ++b) {
      for (int x : out[a]) {
        if (std::find(out[b].begin(), out[b].end(), x) != out[b].end()) {
          shared = true;
          break;
        }
      }
    }
  }
  if (!shared) {
    out[1][0] = out[0][0];
  }
  return out;
}

struct Placement {
  int start_clip;
  int end_clip;  // exclusive
  int class_id;
};

std::vector<FeatureSequence> generate_split(const GenSpec& spec, const Matrix& pool,
                                            const std::vector<std::vector<int>>& sub_events,
                                            const std::string& split, int num_videos,
                                            uint64_t split_id, int* class_cursor,
                                            const std::vector<int>& class_cycle) {
  Rng root(spec.seed);
  // Each split gets its own background mean: the train split sits at zero, any
  // other split is shifted by a fixed unit vector (the novel-environment
  // analog: same actions, different surroundings).
  std::vector<double> bg_mean(spec.feature_dim, 0.0);
  if (split != "train") {
    Rng bg_rng = root.fork(900 + split_id);
    double sq = 0.0;
    for (double& x : bg_mean) {
      x = bg_rng.gaussian();
      sq += x * x;
    }
    double norm = std::sqrt(sq);
    for (double& x : bg_mean) x /= norm;
  }

  std::vector<FeatureSequence> videos;
  for (int v = 0; v < num_videos; ++v) {
    Rng rng = root.fork(split_id * 1000003ull + static_cast<uint64_t>(v) + 17);
    FeatureSequence seq;
    std::ostringstream id;
    id << split << "_" << v;
    seq.video_id = id.str();
    seq.clip_stride_seconds = 1.0;

    int want = rng.uniform_int(spec.instances_min, spec.instances_max);
    std::vector<Placement> placed;
    for (int i = 0; i < want; ++i) {
      int dur = rng.uniform_int(8, 32);
      if (dur > spec.clips_per_video) continue;
      bool ok = false;
      for (int attempt = 0; attempt < 64 && !ok; ++attempt) {
        int start = rng.uniform_int(0, spec.clips_per_video - dur);
        ok = true;
        for (const Placement& p : placed) {
          if (start < p.end_clip && p.start_clip < start + dur) {
            ok = false;
            break;
          }
        }
        if (ok) {
          int cls = class_cycle[*class_cursor % class_cycle.size()];
          ++*class_cursor;
          placed.push_back({start, start + dur, cls});
        }
      }
    }
    std::sort(placed.begin(), placed.end(),
              [](const Placement& a, const Placement& b) { return a.start_clip < b.start_clip; });

    seq.features = Matrix(spec.clips_per_video, spec.feature_dim);
    for (int t = 0; t < spec.clips_per_video; ++t) {
      for (int k = 0; k < spec.feature_dim; ++k) {
        seq.features(t, k) = bg_mean[k] + spec.background_sigma * rng.gaussian();
      }
    }
    for (const Placement& p : placed) {
      int len = p.end_clip - p.start_clip;
      int parts = spec.sub_events_per_class;
      int offset = 0;
      for (int s = 0; s < parts; ++s) {
        int part_len = len / parts + (s < len % parts ? 1 : 0);
        int proto = sub_events[p.class_id][s];
        for (int t = p.start_clip + offset; t < p.start_clip + offset + part_len; ++t) {
          for (int k = 0; k < spec.feature_dim; ++k) {
            seq.features(t, k) = pool(proto, k) + spec.noise_sigma * rng.gaussian();
          }
        }
        offset += part_len;
      }
      seq.annotations.push_back({p.start_clip * seq.clip_stride_seconds,
                                 p.end_clip * seq.clip_stride_seconds, p.class_id});
    }
    validate_sequence(seq);
    videos.push_back(std::move(seq));
  }
  return videos;
}

}  // namespace

Corpus generate_corpus(const GenSpec& spec) {
  validate_spec(spec);
  Matrix pool = make_prototype_pool(spec);
  Rng root(spec.seed);
  Rng assign_rng = root.fork(2);
  std::vector<std::vector<int>> sub_events = assign_sub_events(spec, assign_rng);

  Corpus corpus;
  corpus.manifest.spec = spec;
  corpus.manifest.class_sub_events = sub_events;
  for (int c = 0; c < spec.num_classes; ++c) {
    std::ostringstream name;
    name << "action_" << c;
    corpus.manifest.class_names.push_back(name.str());
  }
  corpus.manifest.split_files["train"] = "train.jsonl";
  corpus.manifest.split_files["test"] = "test.jsonl";

  // Class labels cycle through a seeded permutation so per-class instance
  // counts stay balanced within each split.
  std::vector<int> cycle(spec.num_classes);
  for (int c = 0; c < spec.num_classes; ++c) cycle[c] = c;
  Rng cyc_rng = root.fork(3);
  for (int i = spec.num_classes - 1; i > 0; --i) {
    std::swap(cycle[i], cycle[cyc_rng.uniform_int(0, i)]);
  }

  int cursor = 0;
  corpus.splits["train"] =
      generate_split(spec, pool, sub_events, "train", spec.train_videos, 1, &cursor, cycle);
  cursor = 0;
  corpus.splits["test"] =
      generate_split(spec, pool, sub_events, "test", spec.test_videos, 2, &cursor, cycle);
  return corpus;
}

namespace {

nlohmann::json spec_to_json(const GenSpec& s) {
  return {{"num_classes", s.num_classes},
          {"sub_events_per_class", s.sub_events_per_class},
          {"prototype_pool_size", s.prototype_pool_size},
          {"feature_dim", s.feature_dim},
          {"clips_per_video", s.clips_per_video},
          {"instances_min", s.instances_min},
          {"instances_max", s.instances_max},
          {"train_videos", s.train_videos},
          {"test_videos", s.test_videos},
          {"noise_sigma", s.noise_sigma},
          {"background_sigma", s.background_sigma},
          {"prototype_sharing", s.prototype_sharing},
          {"seed", s.seed}};
}

GenSpec spec_from_json(const nlohmann::json& j) {
  GenSpec s;
  s.num_classes = j.at("num_classes").get<int>();
  s.sub_events_per_class = j.at("sub_events_per_class").get<int>();
  s.prototype_pool_size = j.at("prototype_pool_size").get<int>();
  s.feature_dim = j.at("feature_dim").get<int>();
  s.clips_per_video = j.at("clips_per_video").get<int>();
  s.instances_min = j.at("instances_min").get<int>();
  s.instances_max = j.at("instances_max").get<int>();
  s.train_videos = j.at("train_videos").get<int>();
  s.test_videos = j.at("test_videos").get<int>();
  s.noise_sigma = j.at("noise_sigma").get<double>();
  s.background_sigma = j.at("background_sigma").get<double>();
  s.prototype_sharing = j.at("prototype_sharing").get<bool>();
  s.seed = j.at("seed").get<uint64_t>();
  return s;
}

}  // namespace

void write_corpus(const Corpus& corpus, const std::string& dir) {
  fs::create_directories(dir);

  nlohmann::json manifest;
  manifest["schema_version"] = 1;
  manifest["class_names"] = corpus.manifest.class_names;
  manifest["class_sub_events"] = corpus.manifest.class_sub_events;
  manifest["splits"] = corpus.manifest.split_files;
  manifest["gen_spec"] = spec_to_json(corpus.manifest.spec);
  {
    std::ofstream out(fs::path(dir) / "manifest.json");
    if (!out) throw DataError("write_corpus: cannot write manifest in '" + dir + "'");
    out << manifest.dump(2) << "\n";
  }

  for (const auto& [split, filename] : corpus.manifest.split_files) {
    auto it = corpus.splits.find(split);
    if (it == corpus.splits.end()) {
      throw DataError("write_corpus: manifest names split '" + split + "' with no data");
    }
    std::ofstream out(fs::path(dir) / filename);
    if (!out) throw DataError("write_corpus: cannot write '" + filename + "'");
    for (const FeatureSequence& seq : it->second) {
      nlohmann::json line;
      line["video_id"] = seq.video_id;
      line["clip_stride_seconds"] = seq.clip_stride_seconds;
      line["shape"] = {seq.features.rows, seq.features.cols};
      line["features"] = doubles_to_base64(seq.features.data);
      nlohmann::json anns = nlohmann::json::array();
      for (const auto& g : seq.annotations) {
        anns.push_back({{"start", g.start}, {"end", g.end}, {"class_id", g.class_id}});
      }
      line["annotations"] = anns;
      out << line.dump() << "\n";
    }
  }
}

Corpus read_corpus(const std::string& dir) {
  Corpus corpus;
  fs::path manifest_path = fs::path(dir) / "manifest.json";
  std::ifstream min(manifest_path);
  if (!min) throw DataError("read_corpus: missing manifest '" + manifest_path.string() + "'");
  nlohmann::json manifest;
  try {
    min >> manifest;
    corpus.manifest.class_names =
        manifest.at("class_names").get<std::vector<std::string>>();
    corpus.manifest.class_sub_events =
        manifest.at("class_sub_events").get<std::vector<std::vector<int>>>();
    corpus.manifest.split_files =
        manifest.at("splits").get<std::map<std::string, std::string>>();
    corpus.manifest.spec = spec_from_json(manifest.at("gen_spec"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("read_corpus: malformed manifest: " + std::string(e.what()));
  }
  if (static_cast<int>(corpus.manifest.class_names.size()) !=
      corpus.manifest.spec.num_classes) {
    throw DataError("read_corpus: manifest class count does not match gen spec");
  }

  for (const auto& [split, filename] : corpus.manifest.split_files) {
    fs::path path = fs::path(dir) / filename;
    std::ifstream in(path);
    if (!in) throw DataError("read_corpus: missing split file '" + path.string() + "'");
    std::vector<FeatureSequence> videos;
    std::string text;
    int line_no = 0;
    while (std::getline(in, text)) {
      ++line_no;
      if (text.empty()) continue;
      nlohmann::json line;
      FeatureSequence seq;
      try {
        line = nlohmann::json::parse(text);
        seq.video_id = line.at("video_id").get<std::string>();
        seq.clip_stride_seconds = line.at("clip_stride_seconds").get<double>();
        int rows = line.at("shape").at(0).get<int>();
        int cols = line.at("shape").at(1).get<int>();
        seq.features = Matrix(rows, cols);
        for (const auto& a : line.at("annotations")) {
          seq.annotations.push_back({a.at("start").get<double>(), a.at("end").get<double>(),
                                     a.at("class_id").get<int>()});
        }
      } catch (const nlohmann::json::exception& e) {
        throw DataError("read_corpus: " + filename + " line " + std::to_string(line_no) +
                        ": " + e.what());
      }
      if (seq.features.cols != corpus.manifest.spec.feature_dim) {
        throw DataError("read_corpus: video '" + seq.video_id + "' has feature dim " +
                        std::to_string(seq.features.cols) + ", manifest says " +
                        std::to_string(corpus.manifest.spec.feature_dim));
      }
      try {
        std::vector<double> vals = base64_to_doubles(line.at("features").get<std::string>());
        if (vals.size() != seq.features.size()) {
          throw DataError("payload size does not match shape");
        }
        seq.features.data = std::move(vals);
      } catch (const Error& e) {
        throw DataError("read_corpus: video '" + seq.video_id + "': bad feature payload: " +
                        e.what());
      }
      validate_sequence(seq);
      videos.push_back(std::move(seq));
    }
    corpus.splits[split] = std::move(videos);
  }
  return corpus;
}

}  // namespace otloc
