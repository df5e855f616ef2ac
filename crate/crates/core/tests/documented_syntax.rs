use eihd::analyze::Battery;
use eihd::edits::RuleSet;
use eihd::schema::default_acs_schema;

#[test]
fn rule_language_examples_parse() {
    let s = default_acs_schema();
    let text = "\
rule head_under_16: head.Age < 16 => violation
rule two_spouses: forall p, q: p.Relationship == spouse and q.Relationship == spouse => violation
rule child_too_old: forall p: p.Relationship == biological_child and p.Age > head.Age - 12 => violation
rule big_young_household: size >= 5 and exists p: p.Age < 18 and count(q: q.Relationship == spouse) == 0 => violation
";
    let rules = RuleSet::parse(text, &s).unwrap();
    assert_eq!(rules.len(), 4);
}

#[test]
fn battery_examples_parse() {
    let s = default_acs_schema();
    let text = "\
marginal Relationship Age=30
bivariate Gender Relationship
trivariate HeadGender Gender Relationship
all marginal
query owners_with_spouse: hh.Ownership == owned and exists p: p.Relationship == spouse
query couples given exists p: p.Relationship == spouse: head.Age > 50
";
    let b = Battery::parse(text, &s).unwrap();
    // The first line lists two marginals.
    assert_eq!(b.items.len(), 7);
}
