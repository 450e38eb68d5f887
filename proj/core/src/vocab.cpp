#include "ltg/vocab.hpp"

#include <algorithm>
#include <stdexcept>

#include "ltg/lexicon.hpp"

namespace ltg {

namespace {
bool all_digits(std::string_view w) {
  return !w.empty() &&
         std::all_of(w.begin(), w.end(), [](char c) { return c >= '0' && c <= '9'; });
}
}  // namespace

const Vocabulary& Vocabulary::world() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> words = template_words();
    for (const auto& w : scene_words()) words.push_back(w);
    return Vocabulary(words);
  }();
  return vocab;
}

Vocabulary::Vocabulary(const std::vector<std::string>& words) {
  pieces_ = {"[PAD]", "[UNK]", "[CLS]", "[SEP]", "[BOS]", "[EOS]"};
  for (const auto& w : words) {
    if (w.empty() || word_ids_.count(w)) continue;
    if (all_digits(w)) throw std::invalid_argument("numbers are not whole-word pieces: " + w);
    word_ids_[w] = static_cast<int>(pieces_.size());
    pieces_.push_back(w);
  }
  digit0_ = static_cast<int>(pieces_.size());
  for (char c = '0'; c <= '9'; ++c) pieces_.push_back(std::string("#") + c);
  start0_ = static_cast<int>(pieces_.size());
  for (char c = 'a'; c <= 'z'; ++c) pieces_.push_back(std::string("^") + c);
  cont0_ = static_cast<int>(pieces_.size());
  for (char c = 'a'; c <= 'z'; ++c) pieces_.push_back(std::string("~") + c);
}

int Vocabulary::word_id(std::string_view word) const {
  auto it = word_ids_.find(std::string(word));
  return it == word_ids_.end() ? -1 : it->second;
}

std::vector<int> Vocabulary::encode_word(std::string_view word) const {
  if (int id = word_id(word); id >= 0) return {id};
  std::vector<int> out;
  if (all_digits(word)) {
    std::string padded(word);
    if (padded.size() < 3) padded.insert(0, 3 - padded.size(), '0');
    for (char c : padded) out.push_back(digit0_ + (c - '0'));
    return out;
  }
  bool first = true;
  for (char c : word) {
    if (c >= 'a' && c <= 'z') {
      out.push_back((first ? start0_ : cont0_) + (c - 'a'));
    } else {
      out.push_back(kUnk);
    }
    first = false;
  }
  if (out.empty()) out.push_back(kUnk);
  return out;
}

std::vector<int> Vocabulary::encode_words(const std::vector<std::string>& words) const {
  std::vector<int> out;
  for (const auto& w : words) {
    auto ids = encode_word(w);
    out.insert(out.end(), ids.begin(), ids.end());
  }
  return out;
}

std::vector<std::string> Vocabulary::decode(const std::vector<int>& ids) const {
  std::vector<std::string> words;
  std::string digits;
  std::string letters;
  auto flush_digits = [&] {
    while (!digits.empty()) {
      std::string chunk = digits.substr(0, 3);
      digits.erase(0, chunk.size());
      auto nz = chunk.find_first_not_of('0');
      words.push_back(nz == std::string::npos ? "0" : chunk.substr(nz));
    }
  };
  auto flush_letters = [&] {
    if (!letters.empty()) words.push_back(letters);
    letters.clear();
  };
  for (int id : ids) {
    if (is_digit_piece(id)) {
      flush_letters();
      digits.push_back(static_cast<char>('0' + (id - digit0_)));
    } else if (is_letter_start(id)) {
      flush_digits();
      flush_letters();
      letters.push_back(static_cast<char>('a' + (id - start0_)));
    } else if (is_letter_cont(id)) {
      flush_digits();
      letters.push_back(static_cast<char>('a' + (id - cont0_)));
    } else {
      flush_digits();
      flush_letters();
      if (id > kEos && id < size()) words.push_back(pieces_[static_cast<std::size_t>(id)]);
    }
  }
  flush_digits();
  flush_letters();
  return words;
}

}  // namespace ltg
