#pragma once

// Shared piece vocabulary for the text encoders and the answer generator.
//
// A word maps to a single piece when it is in the closed world vocabulary.
// Numbers map to exactly three zero-padded digit pieces. Any other word is
// spelled out with letter pieces, where the first letter uses a word-start
// piece so adjacent spelled words stay separable. Characters outside [a-z0-9]
// map to the UNK piece.

#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace ltg {

class Vocabulary {
 public:
  enum Special : int { kPad = 0, kUnk = 1, kCls = 2, kSep = 3, kBos = 4, kEos = 5 };

  /// World vocabulary: template words + scene words + digit/letter pieces.
  static const Vocabulary& world();

  explicit Vocabulary(const std::vector<std::string>& words);

  int size() const { return static_cast<int>(pieces_.size()); }
  const std::string& piece(int id) const { return pieces_.at(static_cast<std::size_t>(id)); }
  /// Id of a whole-word piece, or -1.
  int word_id(std::string_view word) const;
  bool contains_word(std::string_view word) const { return word_id(word) >= 0; }

  std::vector<int> encode_word(std::string_view word) const;
  std::vector<int> encode_words(const std::vector<std::string>& words) const;
  /// Inverse of encode_words for well-formed piece runs; specials are skipped.
  std::vector<std::string> decode(const std::vector<int>& ids) const;

  bool is_digit_piece(int id) const { return id >= digit0_ && id < digit0_ + 10; }
  bool is_letter_start(int id) const { return id >= start0_ && id < start0_ + 26; }
  bool is_letter_cont(int id) const { return id >= cont0_ && id < cont0_ + 26; }

 private:
  std::vector<std::string> pieces_;
  std::unordered_map<std::string, int> word_ids_;
  int digit0_ = 0;
  int start0_ = 0;
  int cont0_ = 0;
};

}  // namespace ltg
