#include "icelab/corpus.hpp"

#include <fstream>
#include <random>
#include <set>
#include <sstream>

#include "icelab/errors.hpp"
#include "json.hpp"

namespace icelab {

using json = nlohmann::ordered_json;

Vocab::Vocab() {
  add(kBosText);
  add(kEosText);
}

Vocab::Vocab(const std::vector<std::string>& words) {
  if (words.size() < 2 || words[0] != kBosText || words[1] != kEosText) {
    throw StructuralError("vocabulary must start with the reserved tokens");
  }
  for (const auto& w : words) {
    if (w.empty() || w.find_first_of(" \t\n\r") != std::string::npos) {
      throw StructuralError("vocabulary word '" + w + "' is not a single token");
    }
    if (index_.count(w)) throw StructuralError("duplicate vocabulary word '" + w + "'");
    add(w);
  }
}

Token Vocab::add(const std::string& word) {
  auto it = index_.find(word);
  if (it != index_.end()) return it->second;
  const Token t = static_cast<Token>(words_.size());
  words_.push_back(word);
  index_.emplace(word, t);
  return t;
}

void Vocab::add_text(std::string_view text) {
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) add(w);
}

bool Vocab::contains(const std::string& word) const { return index_.count(word) > 0; }

Token Vocab::id(const std::string& word) const {
  auto it = index_.find(word);
  if (it == index_.end()) throw InputError("out-of-vocabulary word '" + word + "'");
  return it->second;
}

const std::string& Vocab::word(Token t) const {
  if (t < 0 || t >= size()) throw InputError("token " + std::to_string(t) + " outside vocabulary");
  return words_[static_cast<std::size_t>(t)];
}

TokenSeq Vocab::tokenize(std::string_view text) const {
  TokenSeq out;
  std::istringstream is{std::string(text)};
  std::string w;
  while (is >> w) out.push_back(id(w));
  return out;
}

std::string Vocab::detokenize(std::span<const Token> seq) const {
  std::string out;
  for (std::size_t i = 0; i < seq.size(); ++i) {
    if (i) out += ' ';
    out += word(seq[i]);
  }
  return out;
}

namespace {

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string expect_string(const json& j, const char* field, std::size_t index) {
  if (!j.is_string()) {
    throw ParseError("record " + std::to_string(index) + ": field '" + field +
                     "' must be a string");
  }
  return j.get<std::string>();
}

std::vector<std::string> expect_strings(const json& j, const char* field, std::size_t index) {
  if (j.is_string()) return {j.get<std::string>()};
  if (!j.is_array()) {
    throw ParseError("record " + std::to_string(index) + ": field '" + field +
                     "' must be an array of strings");
  }
  std::vector<std::string> out;
  for (const auto& e : j) out.push_back(expect_string(e, field, index));
  return out;
}

EditRecord parse_record(const json& j, std::size_t index, std::size_t& warnings) {
  if (!j.is_object()) throw ParseError("record " + std::to_string(index) + ": not an object");
  EditRecord r;
  if (!j.contains("prompt")) throw ParseError("record " + std::to_string(index) + ": missing 'prompt'");
  if (!j.contains("target_new")) {
    throw ParseError("record " + std::to_string(index) + ": missing 'target_new'");
  }
  r.prompt = expect_string(j["prompt"], "prompt", index);
  r.target_new = expect_string(j["target_new"], "target_new", index);
  if (j.contains("ground_truth")) r.ground_truth = expect_strings(j["ground_truth"], "ground_truth", index);
  bool flagged = false;
  if (j.contains("context")) {
    r.context = expect_strings(j["context"], "context", index);
  } else {
    flagged = true;
  }
  if (j.contains("portability_probes")) {
    const auto& p = j["portability_probes"];
    if (!p.is_array()) {
      throw ParseError("record " + std::to_string(index) + ": 'portability_probes' must be an array");
    }
    for (const auto& e : p) {
      if (!e.is_object() || !e.contains("prompt") || !e.contains("target")) {
        throw ParseError("record " + std::to_string(index) +
                         ": portability probe needs 'prompt' and 'target'");
      }
      r.portability_probes.push_back({expect_string(e["prompt"], "portability_probes", index),
                                      expect_string(e["target"], "portability_probes", index)});
    }
  } else {
    flagged = true;
  }
  if (j.contains("locality_probes")) {
    r.locality_probes = expect_strings(j["locality_probes"], "locality_probes", index);
  } else {
    flagged = true;
  }
  if (flagged) ++warnings;
  return r;
}

json record_json(const EditRecord& r) {
  json j;
  j["prompt"] = r.prompt;
  j["ground_truth"] = r.ground_truth;
  j["target_new"] = r.target_new;
  j["context"] = r.context;
  json probes = json::array();
  for (const auto& p : r.portability_probes) probes.push_back({{"prompt", p.prompt}, {"target", p.target}});
  j["portability_probes"] = probes;
  j["locality_probes"] = r.locality_probes;
  return j;
}

void add_record_words(Vocab& v, const EditRecord& r) {
  v.add_text(r.prompt);
  for (const auto& s : r.ground_truth) v.add_text(s);
  v.add_text(r.target_new);
  for (const auto& s : r.context) v.add_text(s);
  for (const auto& p : r.portability_probes) {
    v.add_text(p.prompt);
    v.add_text(p.target);
  }
  for (const auto& s : r.locality_probes) v.add_text(s);
}

}  // namespace

LoadResult parse_edit_records(std::string_view text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what());
  }
  LoadResult out;
  const json* records = &root;
  bool stored_vocab = false;
  if (root.is_object()) {
    if (!root.contains("records") || !root["records"].is_array()) {
      throw ParseError("dataset object lacks a 'records' array");
    }
    records = &root["records"];
    if (root.contains("vocab")) {
      if (!root["vocab"].is_array()) throw ParseError("'vocab' must be an array of strings");
      std::vector<std::string> words;
      for (const auto& w : root["vocab"]) {
        if (!w.is_string()) throw ParseError("'vocab' must be an array of strings");
        words.push_back(w.get<std::string>());
      }
      out.dataset.vocab = Vocab(words);
      stored_vocab = true;
    }
    if (root.contains("provenance")) {
      if (!root["provenance"].is_string()) throw ParseError("'provenance' must be a string");
      out.dataset.provenance = root["provenance"].get<std::string>();
    }
  } else if (!root.is_array()) {
    throw ParseError("edit-record file must hold an array or a dataset object");
  }
  for (std::size_t i = 0; i < records->size(); ++i) {
    out.dataset.records.push_back(parse_record((*records)[i], i, out.warnings));
  }
  if (!stored_vocab) {
    for (const auto& r : out.dataset.records) add_record_words(out.dataset.vocab, r);
  }
  for (std::size_t i = 0; i < out.dataset.records.size(); ++i) {
    try {
      (void)tokenize_record(out.dataset.vocab, out.dataset.records[i]);
    } catch (const InputError& e) {
      throw ParseError("record " + std::to_string(i) + ": " + e.what());
    }
  }
  return out;
}

LoadResult load_edit_records(const std::filesystem::path& path) {
  return parse_edit_records(read_file(path));
}

std::string edit_records_json(const EditDataset& dataset) {
  json root;
  root["provenance"] = dataset.provenance;
  root["vocab"] = dataset.vocab.words();
  json records = json::array();
  for (const auto& r : dataset.records) records.push_back(record_json(r));
  root["records"] = records;
  return root.dump(1) + "\n";
}

void save_edit_records(const EditDataset& dataset, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << edit_records_json(dataset);
  if (!out) throw IoError("failed writing " + path.string());
}

TokenizedRecord tokenize_record(const Vocab& vocab, const EditRecord& record) {
  TokenizedRecord t;
  t.query = vocab.tokenize(record.prompt);
  t.target = vocab.tokenize(record.target_new);
  for (const auto& c : record.context) t.contexts.push_back(vocab.tokenize(c));
  for (const auto& p : record.portability_probes)
    t.portability.emplace_back(vocab.tokenize(p.prompt), vocab.tokenize(p.target));
  for (const auto& l : record.locality_probes) t.locality.push_back(vocab.tokenize(l));
  return t;
}

std::vector<TokenizedRecord> tokenize_dataset(const EditDataset& dataset) {
  std::vector<TokenizedRecord> out;
  out.reserve(dataset.records.size());
  for (const auto& r : dataset.records) out.push_back(tokenize_record(dataset.vocab, r));
  return out;
}

void check_record_fits(const TokenizedRecord& r, int context_window, int extra_tokens) {
  auto need = [&](std::size_t n, const char* what) {
    if (static_cast<int>(n) + 1 + extra_tokens > context_window) {
      throw InputError(std::string(what) + " does not fit the context window");
    }
  };
  need(r.query.size() + r.target.size(), "query and target");
  for (const auto& c : r.contexts) need(c.size() + r.query.size() + r.target.size(), "context");
  for (const auto& [q, t] : r.portability) need(q.size() + t.size(), "portability probe");
  for (const auto& q : r.locality) need(q.size(), "locality probe");
}

namespace {

struct RelationTemplates {
  std::vector<std::string> queries;   // first is canonical, the rest are rephrases
  std::vector<std::string> contexts;  // statements of a new fact
  std::vector<std::string> objects;
};

const std::vector<RelationTemplates>& relations() {
  static const std::vector<RelationTemplates> rel{
      {{"{s} lives in", "the home of {s} is in", "{s} resides in"},
       {"{s} moved to {o} .", "{s} now lives in {o} .", "the new home of {s} is {o} .",
        "{s} has settled in {o} .", "friends visit {s} in {o} ."},
       {"paris", "london", "rome", "tokyo", "cairo", "lima", "oslo", "berlin", "madrid",
        "new york", "san jose", "hong kong"}},
      {{"{s} works as", "the job of {s} is", "{s} is employed as"},
       {"{s} became a {o} .", "{s} now works as {o} .", "the new job of {s} is {o} .",
        "{s} was hired as {o} .", "everyone knows {s} as a {o} ."},
       {"doctor", "baker", "pilot", "teacher", "farmer", "judge", "nurse", "chef", "painter",
        "police officer", "tax lawyer", "bus driver"}},
      {{"{s} likes to eat", "the favorite food of {s} is", "{s} enjoys eating"},
       {"{s} now loves {o} .", "{s} eats {o} every day .", "the new favorite food of {s} is {o} .",
        "{s} started to eat {o} .", "{s} always orders {o} ."},
       {"rice", "bread", "soup", "apples", "fish", "cheese", "beans", "pasta", "eggs",
        "ice cream", "hot dogs", "green salad"}},
      {{"the pet of {s} is a", "{s} owns a pet", "{s} keeps a pet"},
       {"{s} adopted a {o} .", "{s} now owns a {o} .", "the new pet of {s} is a {o} .",
        "{s} takes care of a {o} .", "{s} walks a {o} ."},
       {"cat", "dog", "horse", "parrot", "snake", "goldfish", "rabbit", "turtle", "hamster",
        "guinea pig", "pony", "tree frog"}},
  };
  return rel;
}

const std::vector<std::string>& base_names() {
  static const std::vector<std::string> names{
      "ada",  "bob",  "cara", "dan",  "eve",  "finn", "gus",  "hana", "ivan", "jade",
      "kai",  "lena", "milo", "nora", "omar", "pia",  "quinn", "rosa", "sam", "tara",
      "uma",  "vic",  "wes",  "xena", "yuri", "zoe",  "abe",  "bea",  "cal",  "dora",
      "eli",  "faye", "gil",  "hugo", "iris", "jon",  "kira", "leo",  "maya", "ned"};
  return names;
}

std::string entity_name(int i) {
  const auto& names = base_names();
  const int n = static_cast<int>(names.size());
  std::string out = names[static_cast<std::size_t>(i % n)];
  if (i >= n) out += std::to_string(i / n + 1);
  return out;
}

std::string fill(const std::string& tmpl, const std::string& s, const std::string& o = {}) {
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    if (tmpl.compare(i, 3, "{s}") == 0) {
      out += s;
      i += 3;
    } else if (tmpl.compare(i, 3, "{o}") == 0) {
      out += o;
      i += 3;
    } else {
      out += tmpl[i++];
    }
  }
  return out;
}

// Index draws by modulo keep streams identical across standard libraries.
std::size_t draw(Rng& rng, std::size_t n) { return static_cast<std::size_t>(rng() % n); }

template <typename T>
void shuffle(std::vector<T>& xs, Rng& rng) {
  for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[draw(rng, i)]);
}

Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(tag), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return Rng(seq);
}

void append_text(TokenSeq& doc, const Vocab& v, const std::string& text) {
  const TokenSeq t = v.tokenize(text);
  doc.insert(doc.end(), t.begin(), t.end());
}

}  // namespace

SynthWorld synth_world(const WorldConfig& config) {
  if (config.n_entities < 1) throw ConfigError("n_entities must be positive");
  if (config.n_relations < 1 || config.n_relations > kMaxRelations) {
    throw ConfigError("n_relations must lie in [1, " + std::to_string(kMaxRelations) + "]");
  }
  const int n_facts = config.n_entities * config.n_relations;
  if (config.n_edits < 0 || config.n_edits > n_facts) {
    throw ConfigError("n_edits must lie in [0, n_entities * n_relations]");
  }
  if (config.docs_per_subject < 0 || config.context_docs_per_fact < 0 || config.locality_probes < 0) {
    throw ConfigError("document and probe counts must be nonnegative");
  }
  if (!(config.fact_noise >= 0.0 && config.fact_noise < 1.0)) {
    throw ConfigError("fact_noise must lie in [0, 1)");
  }
  if (config.n_edits > 0 && config.locality_probes > n_facts - config.n_edits) {
    throw ConfigError("not enough unedited facts for the requested locality probes");
  }

  const auto& rel = relations();
  SynthWorld world;
  Vocab& vocab = world.dataset.vocab;
  for (int r = 0; r < config.n_relations; ++r) {
    for (const auto& q : rel[r].queries) vocab.add_text(fill(q, ""));
    for (const auto& c : rel[r].contexts) vocab.add_text(fill(c, ""));
    for (const auto& o : rel[r].objects) vocab.add_text(o);
  }
  for (int e = 0; e < config.n_entities; ++e) vocab.add(entity_name(e));

  Rng facts_rng = stream(config.seed, 1, 0);
  for (int e = 0; e < config.n_entities; ++e) {
    for (int r = 0; r < config.n_relations; ++r) {
      Fact f;
      f.subject = e;
      f.relation = r;
      f.subject_name = entity_name(e);
      f.object = rel[r].objects[draw(facts_rng, rel[r].objects.size())];
      f.query = fill(rel[r].queries[0], f.subject_name);
      world.facts.push_back(std::move(f));
    }
  }
  auto fact_index = [&](int e, int r) { return static_cast<std::size_t>(e * config.n_relations + r); };

  // Subject documents restate original facts through every query template.
  const int per_doc = std::min(config.n_relations, 3);
  for (int e = 0; e < config.n_entities; ++e) {
    Rng rng = stream(config.seed, 2, static_cast<std::uint64_t>(e));
    for (int d = 0; d < config.docs_per_subject; ++d) {
      std::vector<int> order(static_cast<std::size_t>(config.n_relations));
      for (int r = 0; r < config.n_relations; ++r) order[r] = r;
      shuffle(order, rng);
      TokenSeq doc{kBos};
      for (int k = 0; k < per_doc; ++k) {
        const int r = order[static_cast<std::size_t>(k)];
        const Fact& f = world.facts[fact_index(e, r)];
        const auto& q = rel[r].queries[draw(rng, rel[r].queries.size())];
        const bool noisy = std::uniform_real_distribution<double>(0.0, 1.0)(rng) < config.fact_noise;
        const std::string& o = noisy ? rel[r].objects[draw(rng, rel[r].objects.size())] : f.object;
        append_text(doc, vocab, fill(q, f.subject_name) + " " + o + " .");
      }
      doc.push_back(kEos);
      world.corpus.push_back(std::move(doc));
    }
  }
  // Context documents: a stated fact, a question answered from it, then one
  // more fact about the subject. Without that tail, text sampled after the
  // answer under a context is just the end of the document.
  for (std::size_t i = 0; i < world.facts.size(); ++i) {
    const Fact& f = world.facts[i];
    const auto& t = rel[f.relation];
    Rng rng = stream(config.seed, 3, i);
    for (int d = 0; d < config.context_docs_per_fact; ++d) {
      const auto& o = t.objects[draw(rng, t.objects.size())];
      const auto& c = t.contexts[draw(rng, t.contexts.size())];
      const auto& q = t.queries[draw(rng, t.queries.size())];
      TokenSeq doc{kBos};
      append_text(doc, vocab, fill(c, f.subject_name, o) + " " + fill(q, f.subject_name) + " " + o + " .");
      std::vector<int> others;
      for (int r = 0; r < config.n_relations; ++r)
        if (r != f.relation) others.push_back(r);
      shuffle(others, rng);
      for (std::size_t k = 0; k < others.size() && k < 1; ++k) {
        const Fact& g = world.facts[fact_index(f.subject, others[k])];
        const auto& gq = rel[g.relation].queries[draw(rng, rel[g.relation].queries.size())];
        append_text(doc, vocab, fill(gq, g.subject_name) + " " + g.object + " .");
      }
      doc.push_back(kEos);
      world.corpus.push_back(std::move(doc));
    }
  }

  std::vector<std::size_t> order(world.facts.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng order_rng = stream(config.seed, 4, 0);
  shuffle(order, order_rng);
  world.edited_facts.assign(order.begin(), order.begin() + config.n_edits);
  const std::set<std::size_t> edited(world.edited_facts.begin(), world.edited_facts.end());
  std::vector<std::size_t> untouched;
  for (std::size_t i = 0; i < world.facts.size(); ++i)
    if (!edited.count(i)) untouched.push_back(i);

  for (int k = 0; k < config.n_edits; ++k) {
    const Fact& f = world.facts[world.edited_facts[static_cast<std::size_t>(k)]];
    const auto& t = rel[f.relation];
    Rng rng = stream(config.seed, 5, static_cast<std::uint64_t>(k));
    std::string target;
    do {
      target = t.objects[draw(rng, t.objects.size())];
    } while (target == f.object);

    EditRecord r;
    r.prompt = f.query;
    r.ground_truth = {f.object};
    r.target_new = target;
    for (const auto& c : t.contexts) r.context.push_back(fill(c, f.subject_name, target));
    for (std::size_t q = 1; q < t.queries.size(); ++q)
      r.portability_probes.push_back({fill(t.queries[q], f.subject_name), target});
    std::vector<std::size_t> pool = untouched;
    shuffle(pool, rng);
    for (int l = 0; l < config.locality_probes; ++l)
      r.locality_probes.push_back(world.facts[pool[static_cast<std::size_t>(l)]].query);
    world.dataset.records.push_back(std::move(r));
  }
  world.dataset.provenance = "synthetic(seed=" + std::to_string(config.seed) +
                             ",entities=" + std::to_string(config.n_entities) +
                             ",relations=" + std::to_string(config.n_relations) + ")";
  return world;
}

}  // namespace icelab
