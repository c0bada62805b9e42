#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "crystal/errors.hpp"

namespace crystal {

// Tiny fixed vocabulary: specials, latent-slot ids, the answer tokens, and
// the handful of words the question templates use. Ids are dense from 0.
class Vocab {
public:
    static constexpr int kMaxLatents = 16;

    Vocab() {
        add("<bos>");
        add("<sep>");
        add("<ans>");
        add("<eos>");
        add("<pad>");
        add("<lat>");
        for (int i = 0; i < kMaxLatents; ++i) add("<lat" + std::to_string(i) + ">");
        for (const char* t : {"0", "1", "2", "3", "4", "5", "yes", "no", "left", "right"}) {
            answer_ids_.push_back(static_cast<int>(tokens_.size()));
            add(t);
        }
        for (const char* t : {"circle", "square", "triangle", "red", "green", "blue", "yellow",
                              "how", "many", "is", "there", "a", "where", "the"})
            add(t);
        // color-shape bigrams merge to one token; a composite query key is a
        // single embedding row instead of a two-token composition
        for (const char* color : {"red", "green", "blue", "yellow"})
            for (const char* shape : {"circle", "square", "triangle"})
                add(std::string(color) + " " + shape);
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    int id(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) throw VocabularyError("unknown token \"" + token + "\"");
        return it->second;
    }

    const std::string& token(int id) const {
        if (id < 0 || id >= size()) throw VocabularyError("token id " + std::to_string(id) + " out of range");
        return tokens_[static_cast<size_t>(id)];
    }

    int bos() const { return 0; }
    int sep() const { return 1; }
    int ans() const { return 2; }
    int eos() const { return 3; }
    int pad() const { return 4; }
    int lat_shared() const { return 5; }
    int lat(int k) const {
        if (k < 0 || k >= kMaxLatents) throw VocabularyError("latent slot " + std::to_string(k) + " out of range");
        return 6 + k;
    }

    const std::vector<int>& answer_ids() const { return answer_ids_; }
    bool is_answer_token(int id) const {
        return id >= answer_ids_.front() && id <= answer_ids_.back();
    }

    // Whitespace split with greedy bigram merge, so "red circle" becomes the
    // combo token while every word stays reachable on its own.
    std::vector<int> encode(const std::string& text) const {
        std::vector<std::string> words;
        std::string word;
        for (char c : text) {
            if (c == ' ') {
                if (!word.empty()) words.push_back(word);
                word.clear();
            } else {
                word += c;
            }
        }
        if (!word.empty()) words.push_back(word);

        std::vector<int> ids;
        for (size_t i = 0; i < words.size(); ++i) {
            if (i + 1 < words.size()) {
                auto merged = index_.find(words[i] + " " + words[i + 1]);
                if (merged != index_.end()) {
                    ids.push_back(merged->second);
                    ++i;
                    continue;
                }
            }
            ids.push_back(id(words[i]));
        }
        return ids;
    }

    std::string decode(const std::vector<int>& ids) const {
        std::string out;
        for (size_t i = 0; i < ids.size(); ++i) {
            if (i) out += ' ';
            out += token(ids[i]);
        }
        return out;
    }

private:
    void add(const std::string& t) {
        index_.emplace(t, static_cast<int>(tokens_.size()));
        tokens_.push_back(t);
    }

    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> index_;
    std::vector<int> answer_ids_;
};

}  // namespace crystal
