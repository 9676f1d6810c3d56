/// Built-in word list: function words, biomedical vocabulary, residue names
/// and letters, digits and punctuation. Synthetic task templates draw only
/// from these words so that they never hit the byte fallback.
const WORDS: &str = "
the a an and or but not no of in on at to for from with by as is are was were be been being
has have had do does did this that these those it its their there which who what when where why how
can could may might will would should must shall than then also only both each either more most less
very such into onto over under between within without about after before during through across per
all any some many few other same different high low higher lower large small long short new
The A An This These It In Is Are What Which How Does Do Can
protein proteins gene genes sequence sequences residue residues amino acid acids peptide enzyme enzymes
cell cells membrane domain domains binding binds bind bound structure structural function functional
expression expressed activity active site sites receptor receptors kinase ligand signal signaling pathway
mutation mutations variant variants disease patients patient study studies result results clinical
tissue human mouse yeast bacterial bacteria virus viral DNA RNA mRNA transcription translation
regulation regulates regulated regulatory inhibitor inhibits inhibition interaction interactions complex
localization localized nucleus nuclear cytoplasm cytoplasmic mitochondrial secreted extracellular
soluble solubility stability stable unstable fold folding helix sheet loop coil chain chains terminal
hydrophobic hydrophilic polar nonpolar charged positive negative positively negatively aromatic acidic basic
small tiny rich enriched depleted dominated composed composition fraction content mostly mainly primarily
class family group type label answer yes Yes No dominant common describe Describe property
alanine arginine asparagine aspartate cysteine glutamine glutamate glycine histidine isoleucine leucine
lysine methionine phenylalanine proline serine threonine tryptophan tyrosine valine
A C D E F G H I K L M N P Q R S T V W Y X
Description Sequence Protein Gene Question Answer Abstract Chapter Problem Solution Theorem Proof Code
math number numbers sum product equal equals value values function variable solve solution proof
let Let if If else return def fn var int float list print true false None null
science energy force mass light heat water chemical reaction reactions element elements atom atoms
0 1 2 3 4 5 6 7 8 9
. , ; : ! ? ( ) [ ] { } - + = * / ' \" % < > _ #
";

pub fn default_lexicon() -> Vec<&'static str> {
    WORDS.split_whitespace().collect()
}
