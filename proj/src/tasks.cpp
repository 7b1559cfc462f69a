// SPDX-License-Identifier: Apache-2.0
#include "gatekd/tasks.hpp"

#include "json.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <fstream>
#include <sstream>

namespace gatekd {

namespace {

constexpr std::array<std::string_view, 200> kNames = {
    "Max", "Mikey", "Cynthia", "Holly", "Alice", "Bruno", "Clara", "Dmitri", "Elena", "Felix", "Grace",
    "Hector", "Irene", "Jonas", "Kara", "Liam", "Maya", "Nolan", "Olive", "Pablo", "Quinn", "Rosa", "Simon",
    "Tara", "Ulric", "Vera", "Wade", "Xena", "Yusuf", "Zoe", "Aaron", "Bella", "Caleb", "Daisy", "Ethan",
    "Fiona", "Gavin", "Hazel", "Isaac", "Jade", "Kevin", "Luna", "Mason", "Nina", "Oscar", "Piper", "Reid",
    "Sadie", "Tobias", "Uma", "Victor", "Willa", "Yara", "Zane", "Abel", "Brooke", "Cyrus", "Delia",
    "Emmett", "Faye", "Gideon", "Helen", "Ivan", "Joy", "Kurt", "Lydia", "Miles", "Naomi", "Otto", "Paige",
    "Ralph", "Stella", "Trent", "Ursula", "Vince", "Wendy", "Xavier", "Yvette", "Zachary", "Adele", "Boris",
    "Celia", "Dante", "Edith", "Flynn", "Greta", "Hugo", "Ingrid", "Jasper", "Kendra", "Leon", "Mabel",
    "Nico", "Opal", "Percy", "Ruby", "Seth", "Thea", "Umar", "Violet", "Warren", "Yolanda", "Zelda", "Arlo",
    "Bianca", "Colin", "Dora", "Elliot", "Freya", "Gordon", "Hanna", "Igor", "Josie", "Kyle", "Leah",
    "Marco", "Nora", "Orson", "Pearl", "Rupert", "Sylvia", "Theo", "Una", "Vaughn", "Wanda", "Yasmin",
    "Zack", "Amos", "Beth", "Conrad", "Diana", "Edgar", "Flora", "Glen", "Hilda", "Ira", "Jenna", "Karl",
    "Lena", "Morris", "Nadia", "Owen", "Petra", "Rufus", "Sonia", "Troy", "Velma", "Walter", "Yuri", "Anton",
    "Bonnie", "Cedric", "Dolly", "Ezra", "Fern", "Gus", "Heidi", "Ian", "June", "Kirk", "Lola", "Milo",
    "Nell", "Olaf", "Polly", "Roman", "Selma", "Tate", "Vivian", "Wesley", "Alma", "Bernard", "Carla",
    "Derek", "Eva", "Frank", "Gemma", "Harvey", "Iris", "Jules", "Kim", "Lars", "Mona", "Ned", "Oren",
    "Priya", "Rex", "Sven", "Tessa", "Vlad", "Wilma", "Axel", "Brenda", "Chad", "Dina", "Emil", "Frida",
    "Gail", "Hank", "Rhea"
};

constexpr std::array<std::string_view, 12> kItems = {"hat", "key", "cup", "pen", "box", "map",
                                                     "fan", "jar", "mug", "bag", "toy", "bat"};

// Portable draws: mt19937_64 output is fixed by the standard, distributions are not.
std::uint64_t draw(std::mt19937_64& rng, std::uint64_t n) { return rng() % n; }
double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

char agent_letter(int a) { return static_cast<char>('A' + a); }

}  // namespace

std::string_view to_string(TaskKind t) {
  return t == TaskKind::last_letter ? "last_letter" : "shuffled_objects";
}

TaskKind parse_task(std::string_view s) {
  if (s == "last_letter") return TaskKind::last_letter;
  if (s == "shuffled_objects") return TaskKind::shuffled_objects;
  throw InvalidInput("unknown task: " + std::string(s));
}

std::span<const std::string_view> name_list() { return kNames; }
std::span<const std::string_view> item_list() { return kItems; }

ReasoningExample make_last_letter(std::span<const std::string> words, std::int64_t seed_id) {
  require(!words.empty(), "last_letter: at least one word required");
  ReasoningExample ex;
  ex.task = TaskKind::last_letter;
  ex.seed_id = seed_id;
  for (std::size_t i = 0; i < words.size(); ++i) {
    require(!words[i].empty(), "last_letter: empty word");
    if (i > 0) ex.input_text.push_back(' ');
    ex.input_text += words[i];
    ex.target_text.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(words[i].back()))));
  }
  return ex;
}

ReasoningExample gen_last_letter(int num_words, std::uint64_t seed) {
  require(num_words >= 1, "last_letter: num_words must be >= 1");
  std::mt19937_64 rng(seed);
  std::vector<std::string> words;
  for (int i = 0; i < num_words; ++i) words.emplace_back(kNames[draw(rng, kNames.size())]);
  return make_last_letter(words, static_cast<std::int64_t>(seed));
}

ReasoningExample make_shuffled_objects(const ShuffledObjectsInstance& inst, std::int64_t seed_id) {
  const int n = static_cast<int>(inst.initial_items.size());
  require(n >= 2 && n <= static_cast<int>(kItems.size()), "shuffled_objects: unsupported agent count");
  require(inst.query_agent >= 0 && inst.query_agent < n, "shuffled_objects: query agent out of range");
  std::vector<std::string> held = inst.initial_items;
  std::string text;
  for (int a = 0; a < n; ++a) {
    if (a > 0) text.push_back(' ');
    text += agent_letter(a);
    text += ':' + held[static_cast<std::size_t>(a)];
  }
  text.push_back(';');
  for (std::size_t s = 0; s < inst.swaps.size(); ++s) {
    const auto [a, b] = inst.swaps[s];
    require(a >= 0 && a < n && b >= 0 && b < n && a != b, "shuffled_objects: invalid swap");
    if (s > 0) text.push_back(' ');
    text += agent_letter(a);
    text.push_back('-');
    text += agent_letter(b);
    std::swap(held[static_cast<std::size_t>(a)], held[static_cast<std::size_t>(b)]);
  }
  text.push_back(';');
  text += agent_letter(inst.query_agent);
  text.push_back('?');

  ReasoningExample ex;
  ex.task = TaskKind::shuffled_objects;
  ex.input_text = std::move(text);
  ex.target_text = held[static_cast<std::size_t>(inst.query_agent)];
  ex.seed_id = seed_id;
  return ex;
}

ShuffledObjectsInstance sample_shuffled_objects(int num_agents, int num_swaps, std::uint64_t seed) {
  require(num_agents >= 2 && num_agents <= static_cast<int>(kItems.size()),
          "shuffled_objects: num_agents must be in [2, 12]");
  require(num_swaps >= 0, "shuffled_objects: num_swaps must be >= 0");
  std::mt19937_64 rng(seed);
  std::vector<std::string_view> pool(kItems.begin(), kItems.end());
  ShuffledObjectsInstance inst;
  for (int a = 0; a < num_agents; ++a) {
    const auto pick = draw(rng, pool.size());
    inst.initial_items.emplace_back(pool[pick]);
    pool.erase(pool.begin() + static_cast<std::ptrdiff_t>(pick));
  }
  for (int s = 0; s < num_swaps; ++s) {
    const int a = static_cast<int>(draw(rng, static_cast<std::uint64_t>(num_agents)));
    int b = static_cast<int>(draw(rng, static_cast<std::uint64_t>(num_agents - 1)));
    if (b >= a) ++b;
    inst.swaps.emplace_back(a, b);
  }
  inst.query_agent = static_cast<int>(draw(rng, static_cast<std::uint64_t>(num_agents)));
  return inst;
}

ReasoningExample gen_shuffled_objects(int num_agents, int num_swaps, std::uint64_t seed) {
  return make_shuffled_objects(sample_shuffled_objects(num_agents, num_swaps, seed),
                               static_cast<std::int64_t>(seed));
}

ReasoningExample generate_example(const TaskParams& params, std::uint64_t seed) {
  return params.task == TaskKind::last_letter ? gen_last_letter(params.num_words, seed)
                                              : gen_shuffled_objects(params.num_agents, params.num_swaps, seed);
}

DatasetSplits generate_splits(const TaskParams& params, std::size_t n_train, std::size_t n_val,
                              std::size_t n_test, std::uint64_t seed) {
  DatasetSplits out;
  std::set<std::string> seen;
  const std::size_t total = n_train + n_val + n_test;
  const std::size_t max_attempts = 50 * total + 1000;
  std::size_t attempts = 0;
  for (std::uint64_t i = 0; seen.size() < total; ++i) {
    require(++attempts <= max_attempts, "dataset: task space too small for the requested split sizes");
    // 53-bit seeds survive a round trip through JSON consumers that use doubles.
    const std::uint64_t ex_seed = splitmix64(seed ^ splitmix64(i)) & ((1ULL << 53) - 1);
    ReasoningExample ex = generate_example(params, ex_seed);
    if (!seen.insert(ex.input_text).second) continue;
    if (out.train.size() < n_train) {
      out.train.push_back(std::move(ex));
    } else if (out.validation.size() < n_val) {
      out.validation.push_back(std::move(ex));
    } else {
      out.test.push_back(std::move(ex));
    }
  }
  return out;
}

void validate_splits(const DatasetSplits& splits) {
  require(!splits.train.empty(), "dataset: empty train split");
  require(!splits.validation.empty(), "dataset: empty validation split");
  require(!splits.test.empty(), "dataset: empty test split");
  std::set<std::string> train_inputs;
  for (const auto& e : splits.train) train_inputs.insert(e.input_text);
  std::set<std::string> val_inputs;
  for (const auto& e : splits.validation) {
    require(!train_inputs.contains(e.input_text), "dataset: validation overlaps train: " + e.input_text);
    val_inputs.insert(e.input_text);
  }
  for (const auto& e : splits.test) {
    require(!train_inputs.contains(e.input_text) && !val_inputs.contains(e.input_text),
            "dataset: test overlaps train/validation: " + e.input_text);
  }
}

std::string to_jsonl_line(const ReasoningExample& ex) {
  nlohmann::ordered_json j;
  j["input_text"] = ex.input_text;
  j["target_text"] = ex.target_text;
  j["task"] = std::string(to_string(ex.task));
  if (ex.corrupted) j["corrupted"] = true;
  j["seed_id"] = ex.seed_id;
  return j.dump();
}

ReasoningExample from_jsonl_line(std::string_view line) {
  const auto j = nlohmann::json::parse(line);
  ReasoningExample ex;
  ex.input_text = j.at("input_text").get<std::string>();
  ex.target_text = j.at("target_text").get<std::string>();
  ex.task = parse_task(j.at("task").get<std::string>());
  ex.corrupted = j.value("corrupted", false);
  ex.seed_id = j.at("seed_id").get<std::int64_t>();
  return ex;
}

void write_jsonl(const std::filesystem::path& path, std::span<const ReasoningExample> examples) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), "cannot write " + path.string());
  for (const auto& ex : examples) out << to_jsonl_line(ex) << '\n';
}

std::vector<ReasoningExample> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(static_cast<bool>(in), "cannot read " + path.string());
  std::vector<ReasoningExample> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(from_jsonl_line(line));
  }
  return out;
}

void write_splits(const std::filesystem::path& dir, const DatasetSplits& splits) {
  write_jsonl(dir / "train.jsonl", splits.train);
  write_jsonl(dir / "validation.jsonl", splits.validation);
  write_jsonl(dir / "test.jsonl", splits.test);
}

DatasetSplits read_splits(const std::filesystem::path& dir) {
  return DatasetSplits{read_jsonl(dir / "train.jsonl"), read_jsonl(dir / "validation.jsonl"),
                       read_jsonl(dir / "test.jsonl")};
}

void NoisyTeacherSpec::validate(int vocab_size) const {
  require(error_rate >= 0.0 && error_rate <= 1.0, "noisy teacher: error_rate outside [0,1]");
  require(calibration >= 0.0 && calibration <= 1.0, "noisy teacher: calibration outside [0,1]");
  require(vocab_size >= 2, "noisy teacher: vocabulary too small");
  require(peak_prob > 1.0 / vocab_size && peak_prob < 1.0, "noisy teacher: peak_prob must lie in (1/V, 1)");
}

namespace {

struct Misreading {
  std::string input;
  std::string target;
};

Misreading misread_last_letter(const ReasoningExample& ex, std::mt19937_64& rng) {
  std::vector<std::string> words;
  std::istringstream is(ex.input_text);
  for (std::string w; is >> w;) words.push_back(w);
  require(!words.empty(), "noisy teacher: empty last_letter input");
  std::vector<bool> flip(words.size());
  bool any = false;
  for (std::size_t i = 0; i < words.size(); ++i) any |= (flip[i] = draw(rng, 2) == 1);
  if (!any) flip[draw(rng, words.size())] = true;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (!flip[i]) continue;
    const char orig = static_cast<char>(std::tolower(static_cast<unsigned char>(words[i].back())));
    char repl = static_cast<char>('a' + draw(rng, 25));
    if (repl >= orig) ++repl;
    words[i].back() = repl;
  }
  ReasoningExample wrong = make_last_letter(words);
  return {wrong.input_text, wrong.target_text};
}

Misreading misread_shuffled_objects(const ReasoningExample& ex, std::mt19937_64& rng) {
  // The teacher answers for a different agent than the one asked about.
  const auto q = ex.input_text.size() - 2;
  require(ex.input_text.size() >= 2 && ex.input_text.back() == '?', "noisy teacher: malformed shuffled input");
  const int num_agents = static_cast<int>(std::count(ex.input_text.begin(), ex.input_text.end(), ':'));
  const int asked = ex.input_text[q] - 'A';
  int other = static_cast<int>(draw(rng, static_cast<std::uint64_t>(num_agents - 1)));
  if (other >= asked) ++other;

  // Replay the swaps to find what `other` ends with.
  std::vector<std::string> held;
  const auto semi1 = ex.input_text.find(';');
  const auto semi2 = ex.input_text.find(';', semi1 + 1);
  std::istringstream owners(ex.input_text.substr(0, semi1));
  for (std::string tok; owners >> tok;) held.push_back(tok.substr(2));
  std::istringstream swaps(ex.input_text.substr(semi1 + 1, semi2 - semi1 - 1));
  for (std::string tok; swaps >> tok;) std::swap(held[tok[0] - 'A'], held[tok[2] - 'A']);

  Misreading m{ex.input_text, held[static_cast<std::size_t>(other)]};
  m.input[q] = agent_letter(other);
  return m;
}

}  // namespace

TeacherEmission noisy_teacher_emit(const ReasoningExample& example, const NoisyTeacherSpec& spec,
                                   const CharVocab& vocab, std::mt19937_64& rng) {
  const int v = vocab.size();
  spec.validate(v);
  TeacherEmission em;
  em.vocab_size = v;
  em.corrupted = uniform01(rng) < spec.error_rate;
  if (em.corrupted) {
    Misreading m = example.task == TaskKind::last_letter ? misread_last_letter(example, rng)
                                                        : misread_shuffled_objects(example, rng);
    em.emitted_input = std::move(m.input);
    em.emitted_target = std::move(m.target);
  } else {
    em.emitted_input = example.input_text;
    em.emitted_target = example.target_text;
  }

  const double uniform = 1.0 / v;
  const double peak = em.corrupted ? uniform + (1.0 - spec.calibration) * (spec.peak_prob - uniform)
                                   : spec.peak_prob;
  const double rest = (1.0 - peak) / (v - 1);
  const std::vector<Token> next = vocab.decoder_target(em.emitted_target);
  em.distributions.assign(next.size() * static_cast<std::size_t>(v), rest);
  for (std::size_t t = 0; t < next.size(); ++t)
    em.distributions[t * static_cast<std::size_t>(v) + static_cast<std::size_t>(next[t])] = peak;
  return em;
}

}  // namespace gatekd
