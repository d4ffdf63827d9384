#include "sabre/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace sabre {

using nlohmann::json;

int ExperimentConfig::num_malicious() const {
  return static_cast<int>(std::lround(malicious_fraction * static_cast<double>(num_clients)));
}

int ExperimentConfig::resolved_m() const {
  if (defense.m) return *defense.m;
  return static_cast<int>(std::ceil(0.25 * static_cast<double>(num_clients)));
}

void ExperimentConfig::validate() const {
  if (num_clients < 1) throw InvalidArgument("num_clients must be positive");
  if (!(malicious_fraction >= 0.0 && malicious_fraction < 1.0)) {
    throw InvalidArgument("malicious_fraction must lie in [0, 1)");
  }
  if (num_malicious() >= num_clients) throw InvalidArgument("malicious_fraction leaves no benign client");
  if (rounds < 0) throw InvalidArgument("rounds must be non-negative");
  if (shots < 1) throw InvalidArgument("shots must be at least 1");
  if (partition.kind == PartitionConfig::Kind::Dirichlet && !(partition.alpha > 0.0)) {
    throw InvalidArgument("partition.alpha must be positive");
  }
  if (const auto* t = std::get_if<TrimmedMeanAggregator>(&aggregator); t && t->m < 0) {
    throw InvalidArgument("aggregator.m must be non-negative");
  }
  if (const auto* f = std::get_if<FlameAggregator>(&aggregator); f && !(f->lambda >= 0.0)) {
    throw InvalidArgument("aggregator.lambda must be non-negative");
  }
  if (defense.kind == DefenseConfig::Kind::SabreFl) {
    const int m = resolved_m();
    if (m < 0 || m >= num_clients) throw InvalidArgument("defense.m must satisfy 0 <= m < num_clients");
    if (defense.aux_samples < 1) throw InvalidArgument("defense.aux_samples must be positive");
    if (defense.aux_classes < 1) throw InvalidArgument("defense.aux_classes must be positive");
    DetectorHyper{defense.hidden, defense.lr, defense.epochs, defense.batch_size, 0}.validate();
  }
  if (defense.max_embeddings_per_client && *defense.max_embeddings_per_client < 1) {
    throw InvalidArgument("defense.max_embeddings_per_client must be positive");
  }
  TrainSchedule{schedule.epochs, schedule.warmup_epochs, schedule.base_lr, schedule.batch_size, 0}.validate();
  if (prompt.length < 1) throw InvalidArgument("prompt.length must be positive");
  if (!(prompt.init_std >= 0.0)) throw InvalidArgument("prompt.init_std must be non-negative");
  if (!(prompt.temperature > 0.0)) throw InvalidArgument("prompt.temperature must be positive");
  if (encoder.mode == EncoderConfig::Mode::Toy) {
    if (encoder.pixels < 2 || encoder.dim < 1) throw InvalidArgument("encoder.pixels and encoder.dim are too small");
    if (toy_task.num_classes < 2) throw InvalidArgument("toy_task.num_classes must be at least 2");
    if (toy_task.content_rank < 1 || toy_task.content_rank >= encoder.pixels) {
      throw InvalidArgument("toy_task.content_rank must lie in [1, encoder.pixels)");
    }
    if (!(toy_task.sigma >= 0.0) || !(toy_task.off_subspace_noise >= 0.0) || !(toy_task.radius >= 0.0)) {
      throw InvalidArgument("toy_task scales must be non-negative");
    }
    if (toy_task.train_samples < num_clients) throw InvalidArgument("toy_task.train_samples is below num_clients");
    if (toy_task.test_samples < 1) throw InvalidArgument("toy_task.test_samples must be positive");
  } else {
    if (!encoder.path || encoder.path->empty()) throw InvalidArgument("encoder.path is required in precomputed mode");
    if (!(encoder.test_fraction > 0.0 && encoder.test_fraction < 1.0)) {
      throw InvalidArgument("encoder.test_fraction must lie in (0, 1)");
    }
  }
  if (!(attack.poison_rate >= 0.0 && attack.poison_rate <= 1.0)) throw InvalidArgument("attack.poison_rate out of range");
  if (attack.target_class < 0) throw InvalidArgument("attack.target_class must be non-negative");
  attack.validate(attack.target_class + 1);
}

ConfigSyntaxError::ConfigSyntaxError(int line, int column, const std::string& what)
    : Error("malformed config JSON at line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
            what),
      line_(line),
      column_(column) {}

namespace {

class Reader {
 public:
  Reader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw InvalidArgument(path_ + " must be an object");
  }

  bool has(const char* key) const { return j_.contains(key); }

  const json* raw(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void get(const char* key, int& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_integer()) fail(key, "an integer");
      const auto x = v->get<long long>();
      if (x < INT32_MIN || x > INT32_MAX) fail(key, "a 32-bit integer");
      out = static_cast<int>(x);
    }
  }
  void get(const char* key, double& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number()) fail(key, "a number");
      out = v->get<double>();
    }
  }
  void get(const char* key, bool& out) {
    if (const json* v = raw(key)) {
      if (!v->is_boolean()) fail(key, "a boolean");
      out = v->get<bool>();
    }
  }
  void get(const char* key, std::string& out) {
    if (const json* v = raw(key)) {
      if (!v->is_string()) fail(key, "a string");
      out = v->get<std::string>();
    }
  }
  void get(const char* key, std::uint64_t& out) {
    if (const json* v = raw(key)) {
      if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0)) {
        fail(key, "a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  template <class T>
  void get(const char* key, std::optional<T>& out) {
    if (const json* v = raw(key)) {
      if (v->is_null()) {
        out.reset();
        return;
      }
      T value{};
      seen_.erase(key);
      get(key, value);
      out = value;
    }
  }

  Reader child(const char* key) {
    const json* v = raw(key);
    static const json empty = json::object();
    return Reader(v ? *v : empty, path_ + "." + key);
  }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.count(it.key())) throw InvalidArgument("unknown config key " + path_ + "." + it.key());
    }
  }

  [[noreturn]] void fail(const char* key, const char* what) const {
    throw InvalidArgument("config key " + path_ + "." + key + " must be " + what);
  }

  const std::string& path() const { return path_; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

AggregatorSpec read_aggregator(Reader r) {
  std::string kind = "mean";
  int m = 1;
  double lambda = 0.001;
  r.get("kind", kind);
  r.get("m", m);
  r.get("lambda", lambda);
  r.finish();
  if (kind == "mean" || kind == "fedavg") return MeanAggregator{};
  if (kind == "trimmed_mean") return TrimmedMeanAggregator{m};
  if (kind == "median") return MedianAggregator{};
  if (kind == "norm_bound") return NormBoundAggregator{};
  if (kind == "flame") return FlameAggregator{lambda};
  throw InvalidArgument("unknown aggregator kind '" + kind + "'");
}

json optional_json(const auto& v) {
  if (v) return json(*v);
  return json(nullptr);
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader r(j, "config");
  r.get("num_clients", c.num_clients);
  r.get("malicious_fraction", c.malicious_fraction);
  r.get("rounds", c.rounds);
  r.get("shots", c.shots);
  r.get("seed", c.seed);

  {
    Reader p = r.child("partition");
    std::string kind = "iid";
    p.get("kind", kind);
    p.get("alpha", c.partition.alpha);
    p.finish();
    if (kind == "iid") {
      c.partition.kind = PartitionConfig::Kind::Iid;
    } else if (kind == "dirichlet") {
      c.partition.kind = PartitionConfig::Kind::Dirichlet;
    } else {
      throw InvalidArgument("unknown partition kind '" + kind + "'");
    }
  }

  c.aggregator = read_aggregator(r.child("aggregator"));

  {
    Reader d = r.child("defense");
    std::string kind = "none";
    d.get("kind", kind);
    d.get("m", c.defense.m);
    d.get("aux_samples", c.defense.aux_samples);
    d.get("aux_classes", c.defense.aux_classes);
    d.get("aux_store", c.defense.aux_store);
    d.get("max_embeddings_per_client", c.defense.max_embeddings_per_client);
    d.get("hidden", c.defense.hidden);
    d.get("lr", c.defense.lr);
    d.get("epochs", c.defense.epochs);
    d.get("batch_size", c.defense.batch_size);
    d.finish();
    if (kind == "none") {
      c.defense.kind = DefenseConfig::Kind::None;
    } else if (kind == "sabre_fl") {
      c.defense.kind = DefenseConfig::Kind::SabreFl;
    } else {
      throw InvalidArgument("unknown defense kind '" + kind + "'");
    }
  }

  {
    Reader a = r.child("attack");
    a.get("target_class", c.attack.target_class);
    a.get("poison_rate", c.attack.poison_rate);
    a.get("trigger_epochs", c.attack.trigger_epochs);
    a.get("step_size", c.attack.step_size);
    a.get("epsilon", c.attack.epsilon);
    a.get("greedy", c.attack.greedy);
    a.get("batch_size", c.attack.batch_size);
    a.get("embed_epsilon", c.attack.embed_epsilon);
    a.get("reoptimize_each_round", c.attack.reoptimize_each_round);
    a.finish();
  }

  {
    Reader s = r.child("schedule");
    s.get("epochs", c.schedule.epochs);
    s.get("warmup_epochs", c.schedule.warmup_epochs);
    s.get("base_lr", c.schedule.base_lr);
    s.get("batch_size", c.schedule.batch_size);
    s.finish();
  }

  {
    Reader p = r.child("prompt");
    p.get("length", c.prompt.length);
    p.get("init_std", c.prompt.init_std);
    p.get("temperature", c.prompt.temperature);
    p.finish();
  }

  {
    Reader e = r.child("encoder");
    std::string mode = "toy";
    e.get("mode", mode);
    e.get("pixels", c.encoder.pixels);
    e.get("dim", c.encoder.dim);
    e.get("orthogonal", c.encoder.orthogonal);
    e.get("path", c.encoder.path);
    e.get("test_path", c.encoder.test_path);
    e.get("test_fraction", c.encoder.test_fraction);
    e.finish();
    if (mode == "toy") {
      c.encoder.mode = EncoderConfig::Mode::Toy;
    } else if (mode == "precomputed") {
      c.encoder.mode = EncoderConfig::Mode::Precomputed;
    } else {
      throw InvalidArgument("unknown encoder mode '" + mode + "'");
    }
  }

  {
    Reader t = r.child("toy_task");
    t.get("num_classes", c.toy_task.num_classes);
    t.get("radius", c.toy_task.radius);
    t.get("sigma", c.toy_task.sigma);
    t.get("content_rank", c.toy_task.content_rank);
    t.get("off_subspace_noise", c.toy_task.off_subspace_noise);
    t.get("train_samples", c.toy_task.train_samples);
    t.get("test_samples", c.toy_task.test_samples);
    t.finish();
  }

  r.finish();
  c.validate();
  return c;
}

ExperimentConfig parse_config(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    // e.byte is 1-based and points one past the offending character.
    const std::size_t pos = e.byte == 0 ? 0 : std::min<std::size_t>(e.byte - 1, text.size());
    int line = 1;
    int column = 1;
    for (std::size_t i = 0; i < pos; ++i) {
      if (text[i] == '\n') {
        ++line;
        column = 1;
      } else {
        ++column;
      }
    }
    std::string what = e.what();
    if (const auto cut = what.find("syntax error"); cut != std::string::npos) what = what.substr(cut);
    throw ConfigSyntaxError(line, column, what);
  }
  return config_from_json(j);
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open config " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

json config_to_json(const ExperimentConfig& c) {
  json agg;
  agg["kind"] = aggregator_name(c.aggregator);
  if (const auto* t = std::get_if<TrimmedMeanAggregator>(&c.aggregator)) agg["m"] = t->m;
  if (const auto* f = std::get_if<FlameAggregator>(&c.aggregator)) agg["lambda"] = f->lambda;

  json j;
  j["num_clients"] = c.num_clients;
  j["malicious_fraction"] = c.malicious_fraction;
  j["rounds"] = c.rounds;
  j["shots"] = c.shots;
  j["seed"] = c.seed;
  j["partition"] = {{"kind", c.partition.kind == PartitionConfig::Kind::Iid ? "iid" : "dirichlet"},
                    {"alpha", c.partition.alpha}};
  j["aggregator"] = agg;
  j["defense"] = {{"kind", c.defense.kind == DefenseConfig::Kind::None ? "none" : "sabre_fl"},
                  {"m", optional_json(c.defense.m)},
                  {"aux_samples", c.defense.aux_samples},
                  {"aux_classes", c.defense.aux_classes},
                  {"aux_store", optional_json(c.defense.aux_store)},
                  {"max_embeddings_per_client", optional_json(c.defense.max_embeddings_per_client)},
                  {"hidden", c.defense.hidden},
                  {"lr", c.defense.lr},
                  {"epochs", c.defense.epochs},
                  {"batch_size", c.defense.batch_size}};
  j["attack"] = {{"target_class", c.attack.target_class},
                 {"poison_rate", c.attack.poison_rate},
                 {"trigger_epochs", c.attack.trigger_epochs},
                 {"step_size", optional_json(c.attack.step_size)},
                 {"epsilon", c.attack.epsilon},
                 {"greedy", c.attack.greedy},
                 {"batch_size", c.attack.batch_size},
                 {"embed_epsilon", c.attack.embed_epsilon},
                 {"reoptimize_each_round", c.attack.reoptimize_each_round}};
  j["schedule"] = {{"epochs", c.schedule.epochs},
                   {"warmup_epochs", c.schedule.warmup_epochs},
                   {"base_lr", c.schedule.base_lr},
                   {"batch_size", c.schedule.batch_size}};
  j["prompt"] = {{"length", c.prompt.length}, {"init_std", c.prompt.init_std}, {"temperature", c.prompt.temperature}};
  j["encoder"] = {{"mode", c.encoder.mode == EncoderConfig::Mode::Toy ? "toy" : "precomputed"},
                  {"pixels", c.encoder.pixels},
                  {"dim", c.encoder.dim},
                  {"orthogonal", c.encoder.orthogonal},
                  {"path", optional_json(c.encoder.path)},
                  {"test_path", optional_json(c.encoder.test_path)},
                  {"test_fraction", c.encoder.test_fraction}};
  j["toy_task"] = {{"num_classes", c.toy_task.num_classes},
                   {"radius", c.toy_task.radius},
                   {"sigma", c.toy_task.sigma},
                   {"content_rank", c.toy_task.content_rank},
                   {"off_subspace_noise", c.toy_task.off_subspace_noise},
                   {"train_samples", c.toy_task.train_samples},
                   {"test_samples", c.toy_task.test_samples}};
  return j;
}

}  // namespace sabre
