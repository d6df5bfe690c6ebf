use std::io::Write;

use super::Attribution;
use crate::corpus::StanceLabel;

/// `rank,name,phi`, one row per contribution in the attribution's order.
pub fn write_csv<W: Write>(a: &Attribution, writer: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["rank", "name", "phi"])?;
    for (rank, c) in a.values.iter().enumerate() {
        w.write_record([(rank + 1).to_string(), c.name.clone(), format!("{:.10}", c.phi)])?;
    }
    w.flush()?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Players in their original order as highlighted `<span>`s. Opacity
/// scales with `|φ|`; red marks a push toward Anti and blue toward Pro.
pub fn render_html(a: &Attribution) -> String {
    let mut ordered: Vec<_> = a.values.iter().collect();
    ordered.sort_by_key(|c| c.index);
    let scale = a.values.iter().map(|c| c.phi.abs()).fold(0.0, f64::max);
    let toward_pro = |phi: f64| match a.target_class {
        Some(StanceLabel::Anti) => phi < 0.0,
        _ => phi > 0.0,
    };
    let spans: Vec<String> = ordered
        .iter()
        .map(|c| {
            let alpha = if scale > 0.0 { c.phi.abs() / scale } else { 0.0 };
            let rgb = if toward_pro(c.phi) { "37,99,235" } else { "220,38,38" };
            format!(
                "<span style=\"background-color: rgba({rgb},{alpha:.3})\" title=\"{:.6}\">{}</span>",
                c.phi,
                escape(&c.name)
            )
        })
        .collect();
    format!("<p class=\"attribution\" data-target=\"{}\">{}</p>\n", escape(&a.target), spans.join(" "))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::explain::{Contribution, Unit};

    fn sample(class: StanceLabel) -> Attribution {
        Attribution {
            target: "p<1>".into(),
            unit: Unit::Token,
            target_class: Some(class),
            values: vec![
                Contribution { index: 1, name: "jab".into(), phi: 0.4 },
                Contribution { index: 0, name: "<URL>".into(), phi: -0.1 },
            ],
            baseline_value: 0.2,
            full_value: 0.5,
        }
    }

    #[test]
    fn csv_keeps_order() {
        let mut buf = Vec::new();
        write_csv(&sample(StanceLabel::Pro), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "rank,name,phi\n1,jab,0.4000000000\n2,<URL>,-0.1000000000\n");
    }

    #[test]
    fn html_colors_follow_the_class_pushed_toward() {
        let pro = render_html(&sample(StanceLabel::Pro));
        assert!(pro.contains("data-target=\"p&lt;1&gt;\""));
        let url = pro.find("&lt;URL&gt;").unwrap();
        assert!(url < pro.find(">jab<").unwrap());
        assert!(pro.contains("rgba(37,99,235,1.000)\" title=\"0.400000\">jab"));
        assert!(pro.contains("rgba(220,38,38,0.250)"));
        let anti = render_html(&sample(StanceLabel::Anti));
        assert!(anti.contains("rgba(220,38,38,1.000)\" title=\"0.400000\">jab"));
    }
}
