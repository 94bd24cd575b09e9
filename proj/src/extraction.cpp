#include "evplan/extraction.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <unordered_map>
#include <unordered_set>

#include "evplan/error.hpp"
#include "evplan/event_graph.hpp"
#include "evplan/tokenizer.hpp"

namespace evplan {

namespace {

const std::unordered_set<std::string>& base_verbs() {
  static const std::unordered_set<std::string> verbs{
      "accept", "achieve", "act", "add", "admire", "admit", "agree", "allow", "answer", "apologize", "appear",
      "apply", "argue", "arrive", "ask", "attend", "avoid", "bake", "be", "become", "begin", "believe", "belong",
      "borrow", "break", "bring", "build", "buy", "call", "care", "carry", "catch", "celebrate", "change", "chase",
      "cheer", "choose", "clean", "climb", "close", "collect", "come", "complain", "complete", "cook", "cost",
      "cry", "cut", "dance", "decide", "deliver", "die", "dig", "discover", "do", "draw", "dream", "drink", "drive",
      "drop", "earn", "eat", "enjoy", "enter", "escape", "exercise", "expect", "explain", "fail", "fall", "feed",
      "feel", "fight", "fill", "find", "finish", "fix", "fly", "follow", "forget", "forgive", "gain", "get", "give",
      "go", "graduate", "grow", "hang", "happen", "hate", "have", "hear", "help", "hide", "hit", "hold", "hope",
      "hug", "hurry", "hurt", "ignore", "improve", "invite", "join", "jump", "keep", "kick", "kill", "kiss", "know",
      "land", "laugh", "learn", "leave", "lend", "let", "lick", "lie", "like", "listen", "live", "lose", "love",
      "make", "marry", "meet", "miss", "move", "need", "notice", "offer", "open", "order", "own", "paint", "pass",
      "pay", "pick", "plan", "plant", "play", "practice", "pray", "prepare", "promise", "protect", "pull", "push",
      "put", "quit", "rain", "reach", "read", "realize", "receive", "relax", "remember", "rent", "repair",
      "reply", "rest", "retire", "return", "ride", "ring", "rise", "run", "save", "say", "scream", "search", "see",
      "sell", "send", "serve", "shop", "shout", "show", "sing", "sit", "sleep", "smell", "smile", "speak", "spend",
      "stand", "start", "stay", "steal", "stop", "study", "succeed", "suggest", "swim", "take", "talk", "taste",
      "teach", "tell", "thank", "think", "throw", "train", "travel", "try", "turn", "understand", "visit", "wait",
      "wake", "walk", "want", "wash", "watch", "wear", "win", "wish", "work", "worry", "write", "yell", "bet",
      "lay", "seem", "wonder"};
  return verbs;
}

const std::unordered_map<std::string, std::string>& irregular() {
  static const std::unordered_map<std::string, std::string> m{
      {"am", "be"},        {"is", "be"},         {"are", "be"},       {"was", "be"},       {"were", "be"},
      {"been", "be"},      {"being", "be"},      {"has", "have"},     {"had", "have"},     {"does", "do"},
      {"did", "do"},       {"done", "do"},       {"went", "go"},      {"gone", "go"},      {"got", "get"},
      {"gotten", "get"},   {"felt", "feel"},     {"made", "make"},    {"said", "say"},     {"took", "take"},
      {"taken", "take"},   {"saw", "see"},       {"seen", "see"},     {"came", "come"},    {"found", "find"},
      {"thought", "think"}, {"told", "tell"},    {"bought", "buy"},   {"ran", "run"},      {"ate", "eat"},
      {"eaten", "eat"},    {"lost", "lose"},     {"left", "leave"},   {"kept", "keep"},    {"began", "begin"},
      {"begun", "begin"},  {"gave", "give"},     {"given", "give"},   {"knew", "know"},    {"known", "know"},
      {"won", "win"},      {"sat", "sit"},       {"stood", "stand"},  {"wrote", "write"},  {"written", "write"},
      {"brought", "bring"}, {"heard", "hear"},   {"met", "meet"},     {"paid", "pay"},     {"sent", "send"},
      {"spent", "spend"},  {"fell", "fall"},     {"fallen", "fall"},  {"drove", "drive"},  {"driven", "drive"},
      {"became", "become"}, {"slept", "sleep"},  {"woke", "wake"},    {"broke", "break"},  {"broken", "break"},
      {"chose", "choose"}, {"chosen", "choose"}, {"forgot", "forget"}, {"hid", "hide"},    {"held", "hold"},
      {"built", "build"},  {"caught", "catch"},  {"taught", "teach"}, {"fought", "fight"}, {"sold", "sell"},
      {"threw", "throw"},  {"thrown", "throw"},  {"wore", "wear"},    {"swam", "swim"},    {"sang", "sing"},
      {"drank", "drink"},  {"flew", "fly"},      {"grew", "grow"},    {"grown", "grow"},   {"lent", "lend"},
      {"rode", "ride"},    {"rang", "ring"},     {"rose", "rise"},    {"stole", "steal"},  {"understood", "understand"},
      {"dug", "dig"},      {"drew", "draw"},     {"fed", "feed"},     {"hung", "hang"},    {"lay", "lie"},
      {"laid", "lay"},     {"spoke", "speak"},   {"dreamt", "dream"}, {"learnt", "learn"}};
  return m;
}

const std::unordered_set<std::string> kModals{"can", "could", "will", "would", "shall", "should", "may", "might", "must"};

const std::unordered_set<std::string> kSubjects{
    "i",    "you",   "he",      "she",     "it",     "we",     "they",     "my",      "your",   "his",  "her",
    "its",  "our",   "their",   "someone", "people", "everyone", "nobody", "personx", "persony", "this", "that",
    "what", "there", "somebody", "me",     "him",    "us",     "them"};

const std::unordered_set<std::string> kSubordinators{"when", "while", "because", "after", "before", "so",
                                                      "but", "then", "although", "though", "since", "if",
                                                      "until", "once", "or"};

const std::unordered_set<std::string> kDropped{"a", "an", "the", "to", "so", "very", "really", "just", "much", "too",
                                                "also", "not", "never", "soon", "again"};

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_verb_base(const std::string& w) { return base_verbs().count(w) != 0; }

// Lowercased word tokens with contractions expanded; punctuation becomes a
// clause break marker ",".
std::vector<std::string> tokenize_sentence(std::string_view sentence) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (cur.empty()) return;
    std::string w = lower(cur);
    cur.clear();
    auto ends = [&](std::string_view suf) { return w.size() > suf.size() && w.ends_with(suf); };
    if (w == "won't") {
      out.insert(out.end(), {"will", "not"});
    } else if (w == "can't") {
      out.insert(out.end(), {"can", "not"});
    } else if (ends("n't")) {
      out.push_back(w.substr(0, w.size() - 3));
      out.push_back("not");
    } else if (ends("'m")) {
      out.push_back(w.substr(0, w.size() - 2));
      out.push_back("am");
    } else if (ends("'re")) {
      out.push_back(w.substr(0, w.size() - 3));
      out.push_back("are");
    } else if (ends("'ve")) {
      out.push_back(w.substr(0, w.size() - 3));
      out.push_back("have");
    } else if (ends("'ll")) {
      out.push_back(w.substr(0, w.size() - 3));
      out.push_back("will");
    } else if (ends("'d")) {
      out.push_back(w.substr(0, w.size() - 2));
      out.push_back("would");
    } else if (ends("'s")) {
      out.push_back(w.substr(0, w.size() - 2));
    } else {
      out.push_back(w);
    }
  };
  for (char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'' || c >= 0x80) {
      cur.push_back(ch);
    } else {
      flush();
      if (ch == ',' || ch == ';' || ch == ':' || ch == '.' || ch == '!' || ch == '?' || ch == '(' || ch == ')') {
        if (out.empty() || out.back() != ",") out.push_back(",");
      }
    }
  }
  flush();
  return out;
}

std::vector<std::vector<std::string>> split_clauses(const std::vector<std::string>& toks) {
  std::vector<std::vector<std::string>> clauses(1);
  for (std::size_t i = 0; i < toks.size(); ++i) {
    const std::string& w = toks[i];
    bool brk = w == "," || kSubordinators.count(w) != 0;
    if (w == "and" && i + 1 < toks.size()) {
      const std::string& next = toks[i + 1];
      brk = kSubjects.count(next) != 0 || lemmatize_verb(next).has_value();
    }
    if (brk) {
      if (!clauses.back().empty()) clauses.emplace_back();
      continue;
    }
    clauses.back().push_back(w);
  }
  if (clauses.back().empty()) clauses.pop_back();
  return clauses;
}

bool is_ing(const std::string& w) { return w.size() > 4 && w.ends_with("ing"); }

std::string join(const std::vector<std::string>& ws) {
  std::string out;
  for (const auto& w : ws) {
    if (!out.empty()) out += ' ';
    out += w;
  }
  return out;
}

}  // namespace

std::optional<std::string> lemmatize_verb(std::string_view word) {
  const std::string w = lower(word);
  if (auto it = irregular().find(w); it != irregular().end()) return it->second;
  if (is_verb_base(w)) return w;
  std::vector<std::string> cands;
  auto strip = [&](std::string_view suf) -> std::optional<std::string> {
    if (w.size() > suf.size() + 1 && w.ends_with(suf)) return w.substr(0, w.size() - suf.size());
    return std::nullopt;
  };
  if (auto b = strip("ies")) cands.push_back(*b + "y");
  if (auto b = strip("ied")) cands.push_back(*b + "y");
  for (std::string_view suf : {"ing", "ed"}) {
    if (auto b = strip(suf)) {
      cands.push_back(*b);
      cands.push_back(*b + "e");
      if (b->size() >= 2 && (*b)[b->size() - 1] == (*b)[b->size() - 2]) cands.push_back(b->substr(0, b->size() - 1));
    }
  }
  if (auto b = strip("d")) cands.push_back(*b);
  if (auto b = strip("es")) cands.push_back(*b);
  if (auto b = strip("s")) cands.push_back(*b);
  for (const auto& c : cands)
    if (is_verb_base(c)) return c;
  return std::nullopt;
}

bool is_subject_word(std::string_view word) { return kSubjects.count(lower(word)) != 0; }

std::vector<std::string> extract_events(std::string_view sentence) {
  std::vector<std::string> events;
  std::vector<std::string> last_subject;
  for (const auto& clause : split_clauses(tokenize_sentence(sentence))) {
    // locate the main verb: skip modals, and let be/have/do hand over to a
    // following participle or bare verb
    std::optional<std::size_t> vpos;
    std::string lemma;
    for (std::size_t i = 0; i < clause.size(); ++i) {
      if (kModals.count(clause[i]) != 0) continue;
      auto l = lemmatize_verb(clause[i]);
      if (!l) continue;
      vpos = i;
      lemma = *l;
      if (lemma == "be" || lemma == "have" || lemma == "do") {
        std::size_t j = i + 1;
        while (j < clause.size() && (clause[j] == "not" || clause[j] == "never")) ++j;
        if (j < clause.size()) {
          auto next = lemmatize_verb(clause[j]);
          const bool hand_over = next && (lemma != "be" || is_ing(clause[j]) || clause[j].ends_with("ed"));
          if (hand_over) {
            vpos = j;
            lemma = *next;
          }
        }
      }
      break;
    }
    if (!vpos) continue;
    std::vector<std::string> subject;
    for (std::size_t i = 0; i < *vpos; ++i) {
      const std::string& w = clause[i];
      if (kDropped.count(w) || kModals.count(w) || w == "not") continue;
      if (w == "and" && (subject.empty() || subject.back() == "and")) continue;
      if (auto l = lemmatize_verb(w); l && (*l == "be" || *l == "have" || *l == "do")) continue;
      subject.push_back(w);
    }
    if (!subject.empty() && subject.back() == "and") subject.pop_back();
    if (subject.empty() && !last_subject.empty() && *vpos > 0) subject = last_subject;
    if (!subject.empty()) last_subject = subject;
    std::vector<std::string> words = subject;
    words.push_back(lemma);
    std::size_t added = 0;
    for (std::size_t i = *vpos + 1; i < clause.size() && added < 3; ++i) {
      const std::string& w = clause[i];
      if (kDropped.count(w) || kModals.count(w)) continue;
      words.push_back(w);
      ++added;
    }
    events.push_back(normalize_event(join(words)));
  }
  if (events.empty()) events.emplace_back(tokens::noevt);
  return events;
}

namespace {

std::vector<std::string> split_on(std::string_view s, std::string_view delim) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(delim, start);
    out.emplace_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + delim.size();
  }
  return out;
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

}  // namespace

CorpusInstance parse_corpus_line(std::string_view line, std::size_t line_no) {
  auto fields = split_on(line, "\t");
  if (fields.size() < 2 || fields.size() > 3) {
    throw ParseError("corpus record needs 'context<TAB>target[<TAB>events]', got " + std::to_string(fields.size()) +
                         " fields",
                     line_no);
  }
  CorpusInstance inst;
  for (auto& s : split_on(fields[0], "|||")) {
    std::string t = trim(s);
    if (!t.empty()) inst.context.push_back(std::move(t));
  }
  inst.target = trim(fields[1]);
  if (inst.context.empty()) throw ParseError("corpus record has no context sentence", line_no);
  if (inst.target.empty()) throw ParseError("corpus record has an empty target", line_no);
  if (fields.size() == 3 && !trim(fields[2]).empty()) {
    std::vector<std::vector<std::string>> ev;
    for (auto& sent : split_on(fields[2], "|||")) {
      std::vector<std::string> list;
      for (auto& e : split_on(sent, ";;")) {
        std::string t = trim(e);
        if (!t.empty()) list.push_back(t == tokens::noevt ? t : normalize_event(t));
      }
      if (list.empty()) list.emplace_back(tokens::noevt);
      ev.push_back(std::move(list));
    }
    if (ev.size() != inst.context.size() + 1) {
      throw ParseError("events field lists " + std::to_string(ev.size()) + " sentences, expected " +
                           std::to_string(inst.context.size() + 1) + " (context sentences plus target)",
                       line_no);
    }
    inst.events = std::move(ev);
  }
  return inst;
}

std::string format_corpus_line(const CorpusInstance& instance) {
  std::string out;
  for (std::size_t i = 0; i < instance.context.size(); ++i) out += (i ? " ||| " : "") + instance.context[i];
  out += '\t' + instance.target;
  if (instance.events) {
    out += '\t';
    for (std::size_t s = 0; s < instance.events->size(); ++s) {
      if (s) out += " ||| ";
      const auto& list = (*instance.events)[s];
      for (std::size_t e = 0; e < list.size(); ++e) out += (e ? " ;; " : "") + list[e];
    }
  }
  return out;
}

std::vector<CorpusInstance> read_corpus(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw DataError("cannot open corpus " + file.string());
  std::vector<CorpusInstance> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(in, line)) {
    ++n;
    if (trim(line).empty()) continue;
    out.push_back(parse_corpus_line(line, n));
  }
  return out;
}

void write_corpus(const std::filesystem::path& file, const std::vector<CorpusInstance>& corpus) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write " + file.string());
  for (const auto& c : corpus) out << format_corpus_line(c) << '\n';
}

std::string context_text(const CorpusInstance& instance) {
  std::string out;
  for (const auto& s : instance.context) out += (out.empty() ? "" : " ") + s;
  return out;
}

std::vector<std::vector<std::string>> instance_events(const CorpusInstance& instance) {
  if (instance.events) return *instance.events;
  std::vector<std::vector<std::string>> out;
  for (const auto& s : instance.context) out.push_back(extract_events(s));
  out.push_back(extract_events(instance.target));
  return out;
}

PathPair build_instance_path(const CorpusInstance& instance, const RelationFn& relation) {
  auto per_sentence = instance_events(instance);
  std::vector<std::string> ctx;
  for (std::size_t s = 0; s + 1 < per_sentence.size(); ++s)
    ctx.insert(ctx.end(), per_sentence[s].begin(), per_sentence[s].end());
  const auto& tgt = per_sentence.back();
  if (ctx.empty()) ctx.emplace_back(tokens::noevt);
  PathPair pair;
  pair.observed.start = ctx.front();
  for (std::size_t i = 1; i < ctx.size(); ++i) pair.observed.steps.push_back({relation(ctx[i - 1], ctx[i]), ctx[i]});
  std::string prev = ctx.back();
  for (const auto& e : tgt) {
    pair.continuation.push_back({relation(prev, e), e});
    prev = e;
  }
  if (pair.continuation.empty()) pair.continuation.push_back({relation(prev, std::string(tokens::noevt)), std::string(tokens::noevt)});
  return pair;
}

}  // namespace evplan
