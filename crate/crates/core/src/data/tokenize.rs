/// Whitespace tokenizer that splits punctuation into standalone tokens.
///
/// `char_mode` treats every non-space character as its own token, for
/// scripts written without word delimiters.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Tokenizer {
    pub lowercase: bool,
    pub char_mode: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            lowercase: true,
            char_mode: false,
        }
    }
}

impl Tokenizer {
    pub fn tokenize(&self, line: &str) -> Vec<String> {
        let text = if self.lowercase {
            line.to_lowercase()
        } else {
            line.to_string()
        };
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            if self.char_mode {
                out.extend(word.chars().map(String::from));
                continue;
            }
            let mut cur = String::new();
            for ch in word.chars() {
                if ch.is_alphanumeric() || ch == '_' {
                    cur.push(ch);
                } else {
                    if !cur.is_empty() {
                        out.push(std::mem::take(&mut cur));
                    }
                    out.push(ch.to_string());
                }
            }
            if !cur.is_empty() {
                out.push(cur);
            }
        }
        out
    }
}
