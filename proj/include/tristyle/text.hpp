#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "tristyle/nn.hpp"

namespace tristyle {

// Lowercased alphabetic words; everything else separates tokens.
std::vector<std::string> split_words(std::string_view text);

// The tiny fixed vocabulary the toy denoiser is conditioned on: content
// nouns, relation words, color words and style tokens.
class Vocabulary {
 public:
  static const Vocabulary& standard();

  int size() const { return static_cast<int>(words_.size()); }
  int pad_id() const { return 0; }
  // -1 when absent.
  int id(std::string_view word) const;
  const std::string& word(int id) const { return words_.at(static_cast<std::size_t>(id)); }
  bool is_color(std::string_view word) const;
  const std::vector<std::string>& color_words() const { return colors_; }

  // Throws invalid-input listing every out-of-vocabulary token.
  std::vector<int> encode(std::string_view prompt) const;
  std::vector<std::string> unknown_tokens(std::string_view prompt) const;

 private:
  Vocabulary();
  std::vector<std::string> words_;
  std::vector<std::string> colors_;
};

struct TextEmbedding {
  Tensor vector;  // [tokens, dim]
  std::string source_prompt;
};

// Learned token table plus positional table; prompts are padded to a fixed
// context length so the empty prompt is the all-pad (unconditional) context.
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(int vocab_size, int dim, int context_length, Rng& rng);

  int dim() const { return dim_; }
  int context_length() const { return context_length_; }

  // Pads/truncates each prompt's ids to the context length. Returns [N, L, D].
  ag::Var encode_ids(const std::vector<std::vector<int>>& ids) const;
  ag::Var encode(const std::vector<std::string>& prompts) const;
  TextEmbedding embed(const std::string& prompt) const;

  void collect(const std::string& prefix, nn::ParamList& out) const;

 private:
  ag::Var table_;
  ag::Var positions_;
  int dim_ = 0;
  int context_length_ = 0;
};

}  // namespace tristyle
