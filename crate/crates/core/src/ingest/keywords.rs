use std::path::Path;

use super::io::IngestError;
use super::normalize::ScriptConverter;
use crate::thread::Instance;

/// Terms used to pick target-related posts. Latin-script terms match
/// case-insensitively.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct KeywordList {
    terms: Vec<String>,
    folded: Vec<String>,
}

impl KeywordList {
    pub fn new<I, S>(terms: I) -> Result<KeywordList, IngestError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out: Vec<String> = Vec::new();
        for t in terms {
            let t: String = t.into();
            let t = t.trim().to_string();
            if t.is_empty() {
                return Err(IngestError::Keywords("blank keyword".into()));
            }
            if !out.contains(&t) {
                out.push(t);
            }
        }
        if out.is_empty() {
            return Err(IngestError::Keywords("keyword list is empty".into()));
        }
        let folded = out.iter().map(|t| t.to_lowercase()).collect();
        Ok(KeywordList { terms: out, folded })
    }

    /// One term per line; `#` starts a comment; blank lines are skipped.
    pub fn parse(src: &str) -> Result<KeywordList, IngestError> {
        let terms = src
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect::<Vec<_>>();
        KeywordList::new(terms)
    }

    pub fn load(path: &Path) -> Result<KeywordList, IngestError> {
        let src = std::fs::read_to_string(path).map_err(|e| IngestError::io(path, e))?;
        KeywordList::parse(&src)
    }

    /// The filter terms used for the COVID-19 vaccination target.
    pub fn covid_vaccination() -> KeywordList {
        KeywordList::new([
            "疫苗",
            "免疫",
            "科兴",
            "复必泰",
            "北京生物",
            "武汉生物",
            "辉瑞",
            "莫德纳",
            "克尔来福",
            "复星",
            "阿斯利康",
            "不良反应",
            "蛋白",
            "谷针",
            "一针",
            "两针",
            "接种",
            "打针",
            "灭活",
            "副作用",
            "MRNA",
            "VACCIN",
            "VAXX",
            "IMMUNIZATION",
            "PFIZER",
            "IMMUNO",
            "SUPPRESSED",
            "MODERNA",
            "IMMUNE",
            "SINOVAC",
            "CORONAVAC",
            "COMIRNATY",
            "BIONTECH",
            "ASTRAZENECA",
            "INOCULATION",
        ])
        .expect("built-in list is valid")
    }

    /// Add the converted spelling of every term (e.g. traditional forms of
    /// simplified keywords) so posts in either script match.
    pub fn with_script_variants(&self, conv: &dyn ScriptConverter) -> KeywordList {
        let mut terms = self.terms.clone();
        for t in &self.terms {
            let v = conv.convert(t);
            if !terms.contains(&v) {
                terms.push(v);
            }
        }
        KeywordList::new(terms).expect("variants of valid terms are valid")
    }

    pub fn terms(&self) -> &[String] {
        &self.terms
    }

    pub fn matches(&self, text: &str) -> bool {
        let folded = text.to_lowercase();
        self.folded.iter().any(|t| folded.contains(t.as_str()))
    }
}

/// Posts whose raw text contains at least one keyword, in input order.
pub fn filter_posts(posts: &[Instance], kw: &KeywordList) -> Vec<Instance> {
    posts.iter().filter(|p| kw.matches(&p.raw_text)).cloned().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::HongKongConverter;
    use crate::thread::fixtures::instance;

    #[test]
    fn filters_by_keyword() {
        let kw = KeywordList::covid_vaccination();
        let posts = vec![
            instance("a", None, "打咗疫苗未", 0),
            instance("b", None, "got my pfizer shot", 1),
            instance("c", None, "今日天氣好好", 2),
        ];
        let kept: Vec<_> = filter_posts(&posts, &kw).into_iter().map(|p| p.instance_id).collect();
        assert_eq!(kept, ["a", "b"]);
    }

    #[test]
    fn case_folding_agrees_with_oracle() {
        // oracle: every Latin term matches its own lowercase, uppercase and mixed-case spelling
        let kw = KeywordList::covid_vaccination();
        for t in kw.terms().iter().filter(|t| t.is_ascii()) {
            let lower = t.to_lowercase();
            let mixed: String =
                lower.chars().enumerate().map(|(i, c)| if i % 2 == 0 { c.to_ascii_uppercase() } else { c }).collect();
            for form in [lower.clone(), t.clone(), mixed] {
                assert!(kw.matches(&format!("xx {form} yy")), "{form}");
            }
        }
    }

    #[test]
    fn rejects_blank_terms() {
        assert!(KeywordList::new(["a", " "]).is_err());
        assert!(KeywordList::parse("# only a comment\n\n").is_err());
        let kw = KeywordList::parse("疫苗 # vaccine\nmrna\n").unwrap();
        assert_eq!(kw.terms(), ["疫苗", "mrna"]);
    }

    #[test]
    fn script_variants_match_traditional_posts() {
        let kw = KeywordList::new(["辉瑞"]).unwrap();
        assert!(!kw.matches("輝瑞疫苗"));
        assert!(kw.with_script_variants(&HongKongConverter).matches("打輝瑞"));
    }
}
