#include "tristyle/semantic_caption.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <httplib.h>
#include <openssl/evp.h>

#include "tristyle/errors.hpp"
#include "tristyle/hashing.hpp"
#include "tristyle/image_io.hpp"
#include "tristyle/text.hpp"

namespace tristyle {

std::string image_content_hash(const Tensor& image) {
  require(image.rank() == 3, "image hash expects a [3, H, W] image");
  std::string bytes = std::to_string(image.dim(0)) + "x" + std::to_string(image.dim(1)) + "x" +
                      std::to_string(image.dim(2)) + ":";
  bytes.reserve(bytes.size() + image.size());
  for (float v : image.values()) bytes.push_back(static_cast<char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f)));
  return sha256_hex(bytes);
}

std::string base64_encode(std::string_view bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(bytes.data()), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string base64_decode(std::string_view text) {
  if (text.size() % 4 != 0) fail(ErrorKind::InvalidInput, "base64 length is not a multiple of 4");
  std::string out(3 * text.size() / 4 + 1, '\0');
  const int n = EVP_DecodeBlock(reinterpret_cast<unsigned char*>(out.data()),
                                reinterpret_cast<const unsigned char*>(text.data()), static_cast<int>(text.size()));
  if (n < 0) fail(ErrorKind::InvalidInput, "malformed base64 payload");
  std::size_t len = static_cast<std::size_t>(n);
  for (std::size_t i = text.size(); i > 0 && text[i - 1] == '='; --i) --len;
  out.resize(len);
  return out;
}

StyleLexicon StyleLexicon::from_entries(std::vector<std::string> entries, std::string version) {
  StyleLexicon lex;
  lex.version_ = std::move(version);
  for (const auto& e : entries) {
    auto words = split_words(e);
    if (words.empty()) continue;
    if (words.size() == 1)
      lex.tokens_.insert(words[0]);
    else
      lex.phrases_.push_back(std::move(words));
  }
  std::stable_sort(lex.phrases_.begin(), lex.phrases_.end(),
                   [](const auto& a, const auto& b) { return a.size() > b.size(); });
  return lex;
}

StyleLexicon StyleLexicon::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) fail(ErrorKind::NotFound, "style lexicon not found at " + path.string());
  std::vector<std::string> entries;
  std::string version = "unversioned", line;
  while (std::getline(is, line)) {
    if (line.rfind("# version:", 0) == 0) {
      version = line.substr(10);
      version.erase(0, version.find_first_not_of(' '));
      continue;
    }
    if (line.empty() || line[0] == '#') continue;
    entries.push_back(line);
  }
  return from_entries(std::move(entries), version);
}

StyleLexicon StyleLexicon::load_default() { return load(std::filesystem::path(TRISTYLE_DATA_DIR) / "style_lexicon.txt"); }

std::vector<std::string> StyleLexicon::violations(const std::string& caption) const {
  const auto words = split_words(caption);
  std::vector<std::string> out;
  for (const auto& p : phrases_)
    for (std::size_t i = 0; i + p.size() <= words.size(); ++i)
      if (std::equal(p.begin(), p.end(), words.begin() + static_cast<std::ptrdiff_t>(i))) {
        std::string joined;
        for (const auto& w : p) joined += (joined.empty() ? "" : " ") + w;
        out.push_back(joined);
        break;
      }
  for (const auto& w : words)
    if (tokens_.count(w)) out.push_back(w);
  return out;
}

bool is_function_word(const std::string& word) {
  static const std::set<std::string> words{"a",    "an",   "the",  "of",   "in",     "on",   "with",  "and",
                                           "or",   "by",   "at",   "to",   "for",    "from", "beside", "under",
                                           "near", "over", "into", "onto", "is",     "are",  "its",   "their",
                                           "this", "that", "as",   "like", "behind", "above"};
  return words.count(word) > 0;
}

std::string Captioner::caption_file(const std::filesystem::path& path) const { return caption(read_png(path)); }

MockCaptioner MockCaptioner::load(const std::filesystem::path& fixture_json) {
  std::ifstream is(fixture_json);
  if (!is) fail(ErrorKind::NotFound, "caption fixture table not found at " + fixture_json.string());
  try {
    return MockCaptioner(nlohmann::json::parse(is).get<std::map<std::string, std::string>>());
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::InvalidInput, "malformed caption fixture table " + fixture_json.string() + ": " + e.what());
  }
}

std::string MockCaptioner::caption(const Tensor& image) const {
  const std::string h = image_content_hash(image);
  const auto it = table_.find(h);
  if (it == table_.end())
    fail(ErrorKind::NotFound, "mock captioner has no fixture for image " + h, {{"image_hash", h}});
  return it->second;
}

nlohmann::json MockCaptioner::to_json() const { return table_; }

namespace {

nlohmann::json post_json(const HttpEndpoint& ep, const std::string& route, const nlohmann::json& body) {
  std::string last_error;
  for (int attempt = 1; attempt <= std::max(1, ep.attempts); ++attempt) {
    httplib::Client cli(ep.host, ep.port);
    const auto sec = ep.timeout_ms / 1000, usec = (ep.timeout_ms % 1000) * 1000;
    cli.set_connection_timeout(sec, usec);
    cli.set_read_timeout(sec, usec);
    cli.set_write_timeout(sec, usec);
    auto res = cli.Post(route, body.dump(), "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200)
      fail(ErrorKind::Transport, route + " answered HTTP " + std::to_string(res->status),
           {{"status", res->status}, {"body", res->body}, {"attempts", attempt}});
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::Transport, route + " returned a non-JSON body", {{"attempts", attempt}});
    }
  }
  fail(ErrorKind::Transport, route + " unavailable at " + ep.host + ":" + std::to_string(ep.port) + ": " + last_error,
       {{"attempts", std::max(1, ep.attempts)}, {"host", ep.host}, {"port", ep.port}, {"last_error", last_error},
        {"retryable", true}});
}

std::string string_field(const nlohmann::json& j, const char* key, const std::string& route) {
  if (!j.is_object() || !j.contains(key) || !j[key].is_string())
    fail(ErrorKind::Transport, route + " response lacks string field '" + key + "'");
  return j[key].get<std::string>();
}

std::string tidy(std::string s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) return {};
  s = s.substr(first);
  while (!s.empty() && std::string(" \t\r\n,.;:").find(s.back()) != std::string::npos) s.pop_back();
  return s;
}

}  // namespace

std::string HttpCaptioner::id() const { return "http-captioner@" + endpoint_.host + ":" + std::to_string(endpoint_.port); }

std::string HttpCaptioner::caption(const Tensor& image) const {
  const auto j = post_json(endpoint_, "/caption", {{"image", base64_encode(encode_png(image))}});
  std::string c = tidy(string_field(j, "caption", "/caption"));
  if (c.empty()) fail(ErrorKind::Transport, "/caption returned an empty caption");
  return c;
}

std::string HttpEditClient::id() const { return "http-llm@" + endpoint_.host + ":" + std::to_string(endpoint_.port); }

std::string HttpEditClient::edit(const std::string& text, const std::string& instruction) const {
  return string_field(post_json(endpoint_, "/edit", {{"text", text}, {"instruction", instruction}}), "text", "/edit");
}

std::string RuleStripper::strip(const std::string& caption) const {
  const auto words = split_words(caption);
  if (words.empty()) fail(ErrorKind::InvalidInput, "caption is empty");
  std::vector<bool> removed(words.size(), false);
  // Deleting a span can join the halves of another phrase, so repeat until stable.
  for (bool changed = true; changed;) {
    changed = false;
    std::vector<std::size_t> live;
    for (std::size_t i = 0; i < words.size(); ++i)
      if (!removed[i]) live.push_back(i);
    for (const auto& p : lexicon_.phrases())
      for (std::size_t i = 0; i + p.size() <= live.size(); ++i) {
        bool match = true;
        for (std::size_t k = 0; k < p.size() && match; ++k) match = !removed[live[i + k]] && words[live[i + k]] == p[k];
        if (!match) continue;
        for (std::size_t k = 0; k < p.size(); ++k) removed[live[i + k]] = true;
        changed = true;
      }
    for (std::size_t i = 0; i < words.size(); ++i)
      if (!removed[i] && lexicon_.is_style_token(words[i])) removed[i] = changed = true;
  }

  // A function word stranded between a deleted span and another function word
  // (or either end) belonged to the deleted descriptor.
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < words.size(); ++i)
    if (!removed[i]) kept.push_back(i);
  std::vector<bool> drop(kept.size(), false);
  for (std::size_t k = 0; k < kept.size(); ++k) {
    if (!is_function_word(words[kept[k]])) continue;
    const bool gap_after = (k + 1 < kept.size() ? kept[k + 1] : words.size()) != kept[k] + 1;
    const bool gap_before = (k > 0 ? kept[k - 1] + 1 : 0) != kept[k];
    const bool next_function = k + 1 >= kept.size() || is_function_word(words[kept[k + 1]]);
    const bool prev_open = k == 0 || drop[k - 1] || is_function_word(words[kept[k - 1]]);
    if ((gap_after && next_function) || (gap_before && prev_open && next_function)) drop[k] = true;
  }
  std::vector<std::string> out;
  for (std::size_t k = 0; k < kept.size(); ++k)
    if (!drop[k]) out.push_back(words[kept[k]]);
  while (!out.empty() && is_function_word(out.back())) out.pop_back();
  const bool has_content = std::any_of(out.begin(), out.end(), [](const std::string& w) { return !is_function_word(w); });
  if (!has_content)
    fail(ErrorKind::DegenerateCaption, "caption '" + caption + "' is entirely stylistic; supply a manual caption",
         {{"caption", caption}});
  std::string joined;
  for (const auto& w : out) joined += (joined.empty() ? "" : " ") + w;
  return joined;
}

const std::string& strip_instruction() {
  static const std::string text =
      "Delete every word or phrase in the caption that describes artistic style, medium, technique, texture, "
      "art movement or artist. Do not add, reorder or rephrase anything else. Reply with the edited caption only.";
  return text;
}

std::string LlmStripper::strip(const std::string& caption) const {
  if (tidy(caption).empty()) fail(ErrorKind::InvalidInput, "caption is empty");
  std::string instruction = strip_instruction();
  std::vector<std::string> bad;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::string out = tidy(client_.edit(caption, instruction));
    const auto words = split_words(out);
    if (words.empty() || std::all_of(words.begin(), words.end(), is_function_word))
      fail(ErrorKind::DegenerateCaption, "caption '" + caption + "' is entirely stylistic; supply a manual caption",
           {{"caption", caption}, {"client", client_.id()}});
    bad = lexicon_.violations(out);
    if (bad.empty()) return out;
    instruction = strip_instruction() + " Your previous answer still contained style terms:";
    for (const auto& b : bad) instruction += " '" + b + "'";
    instruction += ".";
  }
  fail(ErrorKind::DegenerateCaption, "edit client kept style terms after one retry; supply a manual caption",
       {{"caption", caption}, {"violations", bad}, {"client", client_.id()}});
}

nlohmann::json CaptionPair::to_json() const {
  return {{"t_clip", t_clip},           {"t_wo_style", t_wo_style}, {"captioner", captioner_id},
          {"stripper", stripper_id},    {"image_hash", image_hash}, {"image", image_ref}};
}

CaptionPair CaptionPair::from_json(const nlohmann::json& j) {
  return {j.at("t_clip").get<std::string>(),    j.at("t_wo_style").get<std::string>(),
          j.at("captioner").get<std::string>(), j.at("stripper").get<std::string>(),
          j.at("image_hash").get<std::string>(), j.value("image", "")};
}

namespace {

std::string pair_key(const std::string& h, const std::string& c, const std::string& s) { return h + "|" + c + "|" + s; }

}  // namespace

PairStore::PairStore(std::filesystem::path path) : path_(std::move(path)) {
  std::ifstream is(path_);
  if (!is) return;
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(is, line))
    if (!line.empty()) lines.push_back(line);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception&) {
      if (i + 1 == lines.size()) break;  // torn final write
      fail(ErrorKind::Io, "corrupt pair store line " + std::to_string(i + 1) + " in " + path_.string());
    }
    const CaptionPair p = CaptionPair::from_json(j);
    const auto key = pair_key(p.image_hash, p.captioner_id, p.stripper_id);
    if (pairs_.emplace(key, p).second) order_.push_back(key);
  }
}

const CaptionPair* PairStore::find(const std::string& image_hash, const std::string& captioner_id,
                                   const std::string& stripper_id) const {
  std::lock_guard lock(mu_);
  const auto it = pairs_.find(pair_key(image_hash, captioner_id, stripper_id));
  return it == pairs_.end() ? nullptr : &it->second;
}

CaptionPair PairStore::put(const CaptionPair& pair) {
  std::lock_guard lock(mu_);
  const auto key = pair_key(pair.image_hash, pair.captioner_id, pair.stripper_id);
  const auto it = pairs_.find(key);
  if (it != pairs_.end()) return it->second;
  if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
  std::ofstream os(path_, std::ios::app);
  if (!os) fail(ErrorKind::Io, "cannot append to pair store " + path_.string());
  os << pair.to_json().dump() << '\n';
  os.flush();
  pairs_.emplace(key, pair);
  order_.push_back(key);
  return pair;
}

std::vector<CaptionPair> PairStore::all() const {
  std::lock_guard lock(mu_);
  std::vector<CaptionPair> out;
  for (const auto& k : order_) out.push_back(pairs_.at(k));
  return out;
}

CaptionPair build_training_pair(const std::filesystem::path& image, const Captioner& captioner,
                                const StyleStripper& stripper, PairStore* store) {
  const Tensor pixels = read_png(image);
  const std::string hash = image_content_hash(pixels);
  if (store)
    if (const CaptionPair* existing = store->find(hash, captioner.id(), stripper.id())) return *existing;
  CaptionPair pair;
  pair.t_clip = captioner.caption(pixels);
  pair.t_wo_style = stripper.strip(pair.t_clip);
  pair.captioner_id = captioner.id();
  pair.stripper_id = stripper.id();
  pair.image_hash = hash;
  pair.image_ref = image.string();
  return store ? store->put(pair) : pair;
}

}  // namespace tristyle
