#include "tristyle/text.hpp"

#include <algorithm>
#include <cctype>

#include "tristyle/errors.hpp"

namespace tristyle {

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalpha(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

Vocabulary::Vocabulary() {
  colors_ = {"red", "green", "blue", "yellow", "purple", "orange", "white", "black", "brown", "pink", "gray"};
  words_ = {"<pad>", "a", "an", "the", "of", "in", "on", "with", "and", "beside", "under", "near", "photo",
            "image", "scene", "house", "tree", "mountain", "boat", "sun", "dog", "lake", "sky"};
  words_.insert(words_.end(), colors_.begin(), colors_.end());
  for (const char* w : {"oil", "painting", "style", "watercolor", "sketch", "van", "gogh", "swirling",
                        "brushstrokes", "impasto", "ink", "stylized", "artwork", "textured", "pastel"})
    words_.emplace_back(w);
}

const Vocabulary& Vocabulary::standard() {
  static const Vocabulary vocab;
  return vocab;
}

int Vocabulary::id(std::string_view word) const {
  auto it = std::find(words_.begin(), words_.end(), word);
  return it == words_.end() ? -1 : static_cast<int>(it - words_.begin());
}

bool Vocabulary::is_color(std::string_view word) const {
  return std::find(colors_.begin(), colors_.end(), word) != colors_.end();
}

std::vector<std::string> Vocabulary::unknown_tokens(std::string_view prompt) const {
  std::vector<std::string> bad;
  for (auto& w : split_words(prompt))
    if (id(w) <= 0) bad.push_back(w);
  return bad;
}

std::vector<int> Vocabulary::encode(std::string_view prompt) const {
  auto bad = unknown_tokens(prompt);
  if (!bad.empty()) {
    std::string list;
    for (const auto& b : bad) list += (list.empty() ? "" : ", ") + b;
    fail(ErrorKind::InvalidInput, "out-of-vocabulary tokens: " + list, {{"tokens", bad}});
  }
  std::vector<int> ids;
  for (auto& w : split_words(prompt)) ids.push_back(id(w));
  return ids;
}

TextEncoder::TextEncoder(int vocab_size, int dim, int context_length, Rng& rng)
    : table_(ag::parameter(rng.normal_tensor({vocab_size, dim}, 0.5f))),
      positions_(ag::parameter(rng.normal_tensor({context_length, dim}, 0.1f))),
      dim_(dim),
      context_length_(context_length) {}

ag::Var TextEncoder::encode_ids(const std::vector<std::vector<int>>& ids) const {
  const int n = static_cast<int>(ids.size());
  std::vector<int> flat(static_cast<std::size_t>(n) * context_length_, 0);
  for (int b = 0; b < n; ++b) {
    const auto& row = ids[static_cast<std::size_t>(b)];
    const int len = std::min<int>(static_cast<int>(row.size()), context_length_);
    std::copy_n(row.begin(), len, flat.begin() + static_cast<std::ptrdiff_t>(b) * context_length_);
  }
  return ag::add_positional(ag::embedding(table_, flat, n, context_length_), positions_);
}

ag::Var TextEncoder::encode(const std::vector<std::string>& prompts) const {
  std::vector<std::vector<int>> ids;
  ids.reserve(prompts.size());
  for (const auto& p : prompts) ids.push_back(Vocabulary::standard().encode(p));
  return encode_ids(ids);
}

TextEmbedding TextEncoder::embed(const std::string& prompt) const {
  ag::NoGradGuard guard;
  Tensor v = encode({prompt}).value();
  return {v.reshaped({context_length_, dim_}), prompt};
}

void TextEncoder::collect(const std::string& prefix, nn::ParamList& out) const {
  out.push_back({prefix + ".tokens", table_});
  out.push_back({prefix + ".positions", positions_});
}

}  // namespace tristyle
