use slowfast::experiments::parse_expression;

struct Case {
    line: usize,
    source: String,
    x: f64,
    y: f64,
    expected: Option<f64>,
}

fn corpus() -> Vec<Case> {
    let text = include_str!("data/expressions.txt");
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.starts_with('#') && !l.trim().is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(" | ").collect();
            assert_eq!(f.len(), 4, "line {}", i + 1);
            Case {
                line: i + 1,
                source: f[0].to_owned(),
                x: f[1].parse().unwrap(),
                y: f[2].parse().unwrap(),
                expected: (f[3] != "error").then(|| f[3].parse().unwrap()),
            }
        })
        .collect()
}

#[test]
fn corpus_has_at_least_fifty_expressions() {
    let cases = corpus();
    let mut sources: Vec<&str> = cases.iter().map(|c| c.source.as_str()).collect();
    sources.dedup();
    assert!(sources.len() >= 50, "{}", sources.len());
}

#[test]
fn corpus_values_match_reference() {
    for c in corpus() {
        let e = parse_expression(&c.source).unwrap_or_else(|err| panic!("line {}: {err}", c.line));
        match (e.eval(c.x, c.y), c.expected) {
            (Ok(v), Some(want)) => {
                let tol = 1e-12 * (1.0 + want.abs());
                assert!(
                    (v - want).abs() <= tol,
                    "line {}: {} gives {v}, want {want}",
                    c.line,
                    c.source
                );
            }
            (Err(_), None) => {}
            (got, want) => panic!("line {}: {} gives {got:?}, want {want:?}", c.line, c.source),
        }
    }
}

#[test]
fn corpus_round_trips_through_display() {
    for c in corpus() {
        let e = parse_expression(&c.source).unwrap();
        let again = parse_expression(&e.to_string()).unwrap();
        assert_eq!(again.tree, e.tree, "line {}", c.line);
    }
}

#[test]
fn right_associative_power_against_both_readings() {
    // the two possible groupings of 2^3^2 disagree, and the parser must pick
    // the right-nested one
    let left = 2f64.powf(3.0).powf(2.0);
    let right = 2f64.powf(3f64.powf(2.0));
    assert_ne!(left, right);
    assert_eq!(
        parse_expression("2^3^2").unwrap().eval(0.0, 0.0).unwrap(),
        right
    );
}
